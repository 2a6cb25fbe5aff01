"""``aclctl``: run the access-control service or act on a ledger file directly."""

from __future__ import annotations

import functools
import json
import logging
from pathlib import Path

import click

from .assets import MethodPolicyBinding
from .client import AclClient, ServiceError
from .contract import authenticate, register_parent, validate_access
from .identity import CertificateRecord, IdentityError
from .ledger import LEDGER_ENV, Ledger, LedgerError
from .policy import PolicyError, document_to_obj, parse_policy
from .service import AclService, make_server

EXIT_DENIED = 3

_FAILURES = (IdentityError, PolicyError, LedgerError, ServiceError, OSError, ValueError)


def _fail_cleanly(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _FAILURES as e:
            raise click.ClickException(str(e).splitlines()[0] if str(e) else type(e).__name__)

    return wrapper


def _ledger_option(fn):
    return click.option(
        "--ledger", "ledger_path", envvar=LEDGER_ENV, default="ledger.json", show_default=True,
        type=click.Path(dir_okay=False, path_type=Path), help="Ledger snapshot file.",
    )(fn)


def _service_option(fn):
    return click.option(
        "--service", envvar="ACL_SERVICE_URL", default=None,
        help="Talk to a running service instead of the ledger file.",
    )(fn)


def _json_option(fn):
    return click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")(fn)


def load_ca_certificate(path: Path) -> CertificateRecord:
    """Accept a PEM root certificate or a certgen CA state file."""
    data = Path(path).read_bytes()
    if data.lstrip().startswith(b"{"):
        return CertificateRecord.from_pem(json.loads(data)["root_certificate"])
    return CertificateRecord.from_pem(data)


@click.group()
def cli():
    """Attribute-based access control over X.509 certificates."""


@cli.command()
@click.option("--listen", default="127.0.0.1:8080", show_default=True, help="host:port to bind.")
@_ledger_option
@click.option("--ca", "cas", multiple=True, type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Trust this CA (PEM or certgen CA file); repeatable, persisted in the ledger.")
@click.option("--bindings", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None,
              help="bindings.json mapping asset methods to policy names.")
@click.option("-v", "--verbose", is_flag=True)
@_fail_cleanly
def serve(listen, ledger_path, cas, bindings, verbose):
    """Serve the HTTP/JSON interface until interrupted."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    ledger = Ledger.open(ledger_path)
    for ca in cas:
        ledger.add_trust_root(load_ca_certificate(ca))
    service = AclService(ledger, MethodPolicyBinding.load(bindings) if bindings else MethodPolicyBinding())
    server = make_server(service, listen)
    host, port = server.server_address[:2]
    # scripts wait for this line before sending requests
    click.echo(f"listening on http://{host}:{port} (ledger {ledger_path}, revision {ledger.revision})", err=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


@cli.command()
@click.option("--cert", "cert_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--policy", "policy_name", required=True)
@_ledger_option
@_service_option
@_json_option
@_fail_cleanly
def validate(cert_path, policy_name, ledger_path, service, as_json):
    """Check a certificate against a named policy; exit status 3 on denial."""
    pem = cert_path.read_text()
    if service:
        with AclClient(service) as client:
            decision = client.validate(pem, policy_name)
    else:
        ledger = Ledger.open(ledger_path)
        decision = validate_access(ledger, authenticate(ledger, pem), policy_name).to_obj()
        decision["revision"] = ledger.revision
    if as_json:
        click.echo(json.dumps(decision, sort_keys=True))
    else:
        verdict = "ALLOW" if decision["allowed"] else "DENY"
        click.echo(f"{verdict} {decision['reason']} satisfied_by={decision['satisfied_by']} "
                   f"policy={decision['policy_name']}@{decision['policy_version']}")
    if not decision["allowed"]:
        click.get_current_context().exit(EXIT_DENIED)


@cli.command("register-parent")
@click.option("--cert", "cert_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@_ledger_option
@_service_option
@_fail_cleanly
def register_parent_cmd(cert_path, ledger_path, service):
    """Store a parent certificate on the ledger and print its digest."""
    pem = cert_path.read_text()
    if service:
        with AclClient(service) as client:
            digest = client.register_parent(pem)["digest"]
    else:
        digest = register_parent(Ledger.open(ledger_path), CertificateRecord.from_pem(pem))
    click.echo(digest)


@cli.group()
def policy():
    """Manage the policy registry."""


@policy.command("add")
@click.argument("file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@_ledger_option
@_service_option
@_fail_cleanly
def policy_add(file, ledger_path, service):
    """Register a policy document (JSON)."""
    doc = parse_policy(file.read_bytes())
    if service:
        with AclClient(service) as client:
            client.add_policy(document_to_obj(doc))
    else:
        Ledger.open(ledger_path).register_policy(doc)
    click.echo(f"registered {doc.name} v{doc.version}")


@policy.command("show")
@click.argument("name")
@_ledger_option
@_service_option
@_fail_cleanly
def policy_show(name, ledger_path, service):
    """Print a registered policy document."""
    if service:
        with AclClient(service) as client:
            obj = client.get_policy(name)["policy"]
    else:
        doc = Ledger.open(ledger_path).get_policy(name)
        if doc is None:
            raise click.ClickException(f"no policy {name!r}")
        obj = document_to_obj(doc)
    click.echo(json.dumps(obj, indent=2))


@cli.group()
def trust():
    """Manage trusted CA roots in a ledger file."""


@trust.command("add")
@click.argument("ca", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@_ledger_option
@_fail_cleanly
def trust_add(ca, ledger_path):
    """Trust a CA root (PEM or certgen CA file)."""
    click.echo(Ledger.open(ledger_path).add_trust_root(load_ca_certificate(ca)))


def main():
    cli(prog_name="aclctl")


if __name__ == "__main__":
    main()
