"""``certgen``: register/enroll wrapper that fills a file-system wallet."""

from __future__ import annotations

import datetime as dt
import functools
import json
from pathlib import Path

import click
from filelock import FileLock

from .client import AclClient, ServiceError
from .identity import (
    PARENT_HASH_ATTR,
    PARENT_SIGNATURE_ATTR,
    RESERVED_PREFIX,
    CaState,
    IdentityError,
    ca_init,
    enroll,
    make_parent_link,
    register,
)
from .policy import PolicyError
from .wallet import WalletError, list_entries, link_from_args, read_entry, resolve_entry, write_entry

_FAILURES = (IdentityError, PolicyError, WalletError, ServiceError, OSError, ValueError)


def _fail_cleanly(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _FAILURES as e:
            raise click.ClickException(str(e).splitlines()[0] if str(e) else type(e).__name__)

    return wrapper


class Ctx:
    def __init__(self, ca: Path, wallet: Path, service: str | None, as_json: bool):
        self.ca = ca
        self.wallet = wallet
        self.service = service
        self.as_json = as_json

    def lock(self) -> FileLock:
        return FileLock(str(self.ca) + ".lock")

    def emit(self, obj: dict, text: str) -> None:
        click.echo(json.dumps(obj, sort_keys=True) if self.as_json else text)


def _parse_attr(text: str) -> tuple[str, str]:
    name, sep, value = text.partition("=")
    if not sep or not name:
        raise click.BadParameter(f"expected name=value, got {text!r}", param_hint="--attr")
    return name, value


def _check_manual_attr(name: str) -> None:
    if name.startswith(RESERVED_PREFIX):
        raise click.BadParameter(
            f"{name!r} is reserved; parent links are set with link-parent or --parent-hash",
            param_hint="--attr",
        )


@click.group()
@click.option("--ca", "ca_path", envvar="CERTGEN_CA", default="ca.json", show_default=True,
              type=click.Path(dir_okay=False, path_type=Path), help="CA state file.")
@click.option("--wallet", envvar="CERTGEN_WALLET", default="wallet", show_default=True,
              type=click.Path(file_okay=False, path_type=Path), help="Wallet directory.")
@click.option("--service", envvar="CERTGEN_SERVICE", default=None,
              help="Access-control service URL, e.g. http://127.0.0.1:8080.")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
@click.pass_context
def cli(ctx, ca_path, wallet, service, as_json):
    """Create identities with attributes and parent links."""
    ctx.obj = Ctx(ca_path, wallet, service, as_json)


@cli.command("init-ca")
@click.option("--subject", required=True, help="Common name of the root certificate.")
@click.option("--validity-days", default=365, show_default=True, type=click.IntRange(min=1),
              help="Validity of certificates the CA issues.")
@click.option("--force", is_flag=True, help="Replace an existing CA file.")
@click.pass_obj
@_fail_cleanly
def init_ca(obj: Ctx, subject, validity_days, force):
    """Create a self-signed root and an empty registry."""
    with obj.lock():
        if obj.ca.exists() and not force:
            raise click.ClickException(f"{obj.ca} exists; use --force to replace it")
        ca = ca_init(subject)
        ca.validity = dt.timedelta(days=validity_days)
        ca.save(obj.ca)
    obj.emit(
        {"ca": str(obj.ca), "subject": subject, "digest": ca.root.digest_hex},
        f"initialised CA {subject!r} in {obj.ca}",
    )


@cli.command("register")
@click.option("--name", required=True)
@click.option("--attr", "attrs", multiple=True, help="Attribute as name=value; repeatable.")
@click.option("-i", "--interactive", is_flag=True, help="Prompt for attributes until a blank name.")
@click.pass_obj
@_fail_cleanly
def register_cmd(obj: Ctx, name, attrs, interactive):
    """Register an identity and print its enrollment secret."""
    pairs = dict(_parse_attr(a) for a in attrs)
    if interactive:
        while True:
            key = click.prompt("attribute name (blank to finish)", default="", show_default=False).strip()
            if not key:
                break
            try:
                _check_manual_attr(key)
            except click.BadParameter as e:
                click.echo(e.format_message(), err=True)
                continue
            pairs[key] = click.prompt(f"value for {key}", default="", show_default=False)
    for key in pairs:
        _check_manual_attr(key)
    with obj.lock():
        ca = CaState.load(obj.ca)
        secret = register(ca, name, pairs)
        ca.save(obj.ca)
    obj.emit({"name": name, "secret": secret, "attributes": pairs}, secret)


def _enroll_into_wallet(obj: Ctx, name: str, secret: str, link, out: Path, force: bool):
    target = Path(out) / name
    if target.exists() and not force:
        raise WalletError(f"wallet entry {target} exists; use --force to replace it")
    with obj.lock():
        ca = CaState.load(obj.ca)
        cert, key = enroll(ca, name, secret, parent=link)
        ca.save(obj.ca)
    path = write_entry(out, name, cert, key, force=force)
    return cert, path


@cli.command("enroll")
@click.option("--name", required=True)
@click.option("--secret", required=True)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=None,
              help="Wallet directory (defaults to --wallet).")
@click.option("--parent-hash", default=None, help=f"Value for {PARENT_HASH_ATTR}.")
@click.option("--parent-signature", default=None, help=f"Value for {PARENT_SIGNATURE_ATTR}.")
@click.option("--force", is_flag=True, help="Overwrite an existing wallet entry.")
@click.pass_obj
@_fail_cleanly
def enroll_cmd(obj: Ctx, name, secret, out, parent_hash, parent_signature, force):
    """Issue the certificate and key for a registered identity."""
    link = link_from_args(parent_hash, parent_signature)
    cert, path = _enroll_into_wallet(obj, name, secret, link, out or obj.wallet, force)
    obj.emit(
        {"name": name, "path": str(path), "digest": cert.digest_hex, "serial": cert.serial},
        f"enrolled {name} -> {path}",
    )


@cli.command("link-parent")
@click.argument("parent")
@click.argument("child", required=False)
@click.option("--enroll-child", is_flag=True,
              help="Register the parent with the service and enroll CHILD carrying the link.")
@click.option("--secret", default=None, help="Enrollment secret of CHILD (with --enroll-child).")
@click.option("--force", is_flag=True, help="Overwrite an existing wallet entry for CHILD.")
@click.pass_obj
@_fail_cleanly
def link_parent(obj: Ctx, parent, child, enroll_child, secret, force):
    """Print the parent-link attributes for PARENT (a wallet entry name or directory)."""
    entry = read_entry(resolve_entry(obj.wallet, parent), need_key=True)
    link = make_parent_link(entry.cert, entry.key)
    result = {PARENT_HASH_ATTR: link.parent_hash, PARENT_SIGNATURE_ATTR: link.parent_signature}
    if enroll_child:
        if not child or not secret:
            raise click.UsageError("--enroll-child needs CHILD and --secret")
        if not obj.service:
            raise click.UsageError("--enroll-child needs --service (or CERTGEN_SERVICE)")
        with AclClient(obj.service) as client:
            registered = client.register_parent(entry.cert.pem)
        if registered["digest"] != link.parent_hash:
            raise click.ClickException("service returned a different digest for the parent")
        cert, path = _enroll_into_wallet(obj, child, secret, link, obj.wallet, force)
        result.update(child=child, path=str(path), digest=cert.digest_hex, revision=registered["revision"])
    text = f"{PARENT_HASH_ATTR}={link.parent_hash}\n{PARENT_SIGNATURE_ATTR}={link.parent_signature}"
    if enroll_child:
        text += f"\nenrolled {child} -> {result['path']}"
    obj.emit(result, text)


@cli.command("list")
@click.pass_obj
@_fail_cleanly
def list_cmd(obj: Ctx):
    """List wallet entries."""
    entries = list_entries(obj.wallet)
    rows = [
        {"name": e.name, "digest": e.cert.digest_hex, "attributes": e.cert.attributes,
         "has_key": e.key is not None}
        for e in entries
    ]
    lines = [
        f"{r['name']}\t{r['digest'][:16]}\t"
        + ",".join(f"{k}={v}" for k, v in r["attributes"].items() if not k.startswith(RESERVED_PREFIX))
        for r in rows
    ]
    obj.emit({"entries": rows}, "\n".join(lines) if lines else "(empty wallet)")


def main():
    cli(prog_name="certgen")


if __name__ == "__main__":
    main()
