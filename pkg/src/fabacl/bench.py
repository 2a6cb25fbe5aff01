"""Latency/throughput harness for validate_access.

Three workloads per policy size n:

* ``basic``: the caller satisfies the policy with its own attributes;
* ``parent``: only the caller's linked parent satisfies it;
* ``base-case``: the contract method returns True without doing anything.

Every transaction goes through the same front end (PEM parsing and a check
that the certificate chains to a trusted CA), so base-case measures the
pipeline cost the other two are compared against.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import os
import platform
import queue
import random
import statistics
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Mapping, Optional

import click

from .client import AclClient, ServiceError
from .contract import authenticate, base_case, register_parent, validate_access
from .identity import CaState, ca_init, enroll, make_parent_link, register
from .ledger import Ledger
from .policy import (
    MAX_NODES,
    And,
    Equals,
    Includes,
    Or,
    PolicyDocument,
    PolicyExpr,
    PolicyLimitError,
    document_to_obj,
    evaluate,
)

MODES = ("base-case", "basic", "parent")
CSV_COLUMNS = [
    "mode", "n", "tx_count", "errors", "mean_latency_s", "median_latency_s",
    "p95_latency_s", "throughput_tps", "seed",
]

# attributes held by the identities that satisfy the benchmark policies
BENCH_ATTRS = {
    "role": "admin",
    "org": "org1",
    "dept": "engineering",
    "groups": "iot,lab,ops",
    "clearance": "high",
    "region": "eu-west",
    "projects": "alpha,beta,gamma,delta",
    "level": "7",
}
CHILD_ATTRS = {"role": "device", "kind": "sensor"}


class BenchError(RuntimeError):
    pass


def _balanced(nodes: list[PolicyExpr], combine: type) -> PolicyExpr:
    if len(nodes) == 1:
        return nodes[0]
    mid = len(nodes) // 2
    return combine([_balanced(nodes[:mid], combine), _balanced(nodes[mid:], combine)])


def _leaf(attr: str, value: str, rng: random.Random, truthy: bool) -> PolicyExpr:
    items = value.split(",")
    if len(items) > 1:
        pick = rng.choice(items)
        return Includes(attr, pick if truthy else pick + "~")
    return Equals(attr, value if truthy else value + "~")


def generate_policy(
    n: int,
    attrs: Mapping[str, str],
    satisfiable: bool,
    seed: int = 0,
    name: Optional[str] = None,
) -> PolicyDocument:
    """A policy with exactly ``n`` attribute checks that evaluates to ``satisfiable``.

    Satisfiable policies are a balanced And over true checks, unsatisfiable
    ones a balanced Or over false checks, so evaluation touches every leaf.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if 2 * n - 1 > MAX_NODES:
        raise PolicyLimitError(f"a policy with {n} checks exceeds {MAX_NODES} nodes")
    rng = random.Random(seed)
    names = sorted(attrs)
    if satisfiable and not names:
        raise ValueError("a satisfiable policy needs at least one attribute")
    leaves: list[PolicyExpr] = []
    for i in range(n):
        if not names:
            leaves.append(Equals(f"bench.absent{i}", "x"))
            continue
        if i % len(names) == 0:
            rng.shuffle(names)
        attr = names[i % len(names)]
        leaves.append(_leaf(attr, attrs[attr], rng, satisfiable))
    expr = _balanced(leaves, And if satisfiable else Or)
    doc = PolicyDocument(name or f"Bench{n}", expr, 1)
    assert evaluate(doc.expr, attrs) is satisfiable
    return doc


@dataclass
class BenchConfig:
    checks_n: list[int] = field(default_factory=lambda: [1, 10, 50, 100])
    modes: list[str] = field(default_factory=lambda: list(MODES))
    tx_count: int = 2000
    duration_s: Optional[float] = None
    concurrency: int = 1
    warmup: int = 200
    seed: int = 0
    identities: int = 8
    target: str = "inproc"
    ca: Optional[str] = None
    max_errors: int = 0
    rounds: int = 10

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not self.checks_n or any(int(n) < 1 for n in self.checks_n):
            raise ValueError("checks_n values must be >= 1")
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")
        if self.tx_count < 1 and self.duration_s is None:
            raise ValueError("need tx_count >= 1 or duration_s")
        unknown = set(self.modes) - set(MODES)
        if unknown:
            raise ValueError(f"unknown modes {sorted(unknown)}; choose from {MODES}")
        if self.identities < 1:
            raise ValueError("identities must be >= 1")

    @classmethod
    def load(cls, path: str | os.PathLike) -> BenchConfig:
        obj = json.loads(Path(path).read_text())
        if "mode" in obj and "modes" not in obj:
            obj["modes"] = [obj.pop("mode")]
        return cls(**obj)


@dataclass
class CellResult:
    mode: str
    n: int
    tx_count: int
    errors: int
    mean_latency_s: float
    median_latency_s: float
    p95_latency_s: float
    throughput_tps: float
    seed: int

    def row(self) -> dict:
        return asdict(self)


@dataclass
class BenchReport:
    rows: list[CellResult]
    metadata: dict

    def cell(self, mode: str, n: int) -> CellResult:
        for r in self.rows:
            if r.mode == mode and r.n == n:
                return r
        raise KeyError((mode, n))

    def write_csv(self, path: str | os.PathLike) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            w.writeheader()
            for r in self.rows:
                w.writerow(r.row())
        path.with_name(path.name + ".meta.json").write_text(json.dumps(self.metadata, indent=2) + "\n")


@dataclass
class Fixtures:
    ledger: Ledger
    ca: CaState
    basic_pems: list[str]
    child_pems: list[str]
    policies: dict[int, PolicyDocument]


def provision(config: BenchConfig, ca: Optional[CaState] = None) -> Fixtures:
    """CA, trusted ledger, satisfying identities, linked children and one policy per n."""
    ca = ca or ca_init("bench-ca")
    ledger = Ledger()
    ledger.add_trust_root(ca.root)
    tag = f"{time.time_ns():x}"
    basic, children = [], []
    for i in range(config.identities):
        secret = register(ca, f"bench-basic-{tag}-{i}", BENCH_ATTRS)
        cert, _ = enroll(ca, f"bench-basic-{tag}-{i}", secret)
        basic.append(cert.pem)

        secret = register(ca, f"bench-owner-{tag}-{i}", BENCH_ATTRS)
        parent, parent_key = enroll(ca, f"bench-owner-{tag}-{i}", secret)
        register_parent(ledger, parent)
        link = make_parent_link(parent, parent_key)
        secret = register(ca, f"bench-device-{tag}-{i}", CHILD_ATTRS)
        child, _ = enroll(ca, f"bench-device-{tag}-{i}", secret, parent=link)
        children.append(child.pem)
    policies = {}
    for n in config.checks_n:
        doc = generate_policy(n, BENCH_ATTRS, True, seed=config.seed + n)
        if evaluate(doc.expr, CHILD_ATTRS):
            raise BenchError(f"policy for n={n} is satisfied by the child attributes")
        ledger.register_policy(doc)
        policies[n] = doc
    return Fixtures(ledger, ca, basic, children, policies)


def workload(seed: int, mode: str, n: int, pool: int) -> Iterator[int]:
    """Endless, seed-determined sequence of identity indexes."""
    rng = random.Random(f"{seed}:{mode}:{n}")
    while True:
        yield rng.randrange(pool)


Call = Callable[[str, str, str], bool]


class InprocTarget:
    label = "inproc"

    def __init__(self, ledger: Ledger):
        self.ledger = ledger

    def worker(self) -> Call:
        ledger = self.ledger

        def call(mode: str, pem: str, policy: str) -> bool:
            cert = authenticate(ledger, pem)
            if mode == "base-case":
                return base_case(ledger, cert, policy)
            return validate_access(ledger, cert, policy).allowed

        return call

    def close(self):
        pass


class HttpTarget:
    def __init__(self, url: str, server=None):
        self.url = url
        self.label = f"http {url}"
        self._server = server
        self._clients: list[AclClient] = []

    def worker(self) -> Call:
        client = AclClient(self.url)
        self._clients.append(client)

        def call(mode: str, pem: str, policy: str) -> bool:
            if mode == "base-case":
                return client.noop(pem)["allowed"]
            return client.validate(pem, policy)["allowed"]

        return call

    def close(self):
        for c in self._clients:
            c.close()
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()


def _publish(fx: Fixtures, url: str) -> None:
    """Push fixture parents and policies to an external service."""
    with AclClient(url) as client:
        for pem in fx.ledger.state.certificates.values():
            client.register_parent(pem)
        for doc in fx.policies.values():
            status, payload = client.request("GET", f"/policies/{doc.name}")
            version = payload["policy"]["version"] + 1 if status == 200 else 1
            client.add_policy(document_to_obj(PolicyDocument(doc.name, doc.expr, version)))


def make_target(config: BenchConfig, fx: Fixtures):
    if config.target == "inproc":
        return InprocTarget(fx.ledger)
    if config.target == "http":
        from .service import AclService, serve_in_thread

        server, url = serve_in_thread(AclService(fx.ledger))
        return HttpTarget(url, server)
    if config.target.startswith("http://"):
        _publish(fx, config.target)
        return HttpTarget(config.target)
    raise BenchError(f"unknown target {config.target!r}")


def _summarise(mode: str, n: int, latencies: list[float], errors: int, elapsed: float, seed: int) -> CellResult:
    done = len(latencies)
    if done == 0:
        return CellResult(mode, n, 0, errors, 0.0, 0.0, 0.0, 0.0, seed)
    lat = sorted(latencies)
    p95 = statistics.quantiles(lat, n=20, method="inclusive")[18] if done > 1 else lat[0]
    return CellResult(
        mode=mode,
        n=n,
        tx_count=done,
        errors=errors,
        mean_latency_s=statistics.fmean(lat),
        median_latency_s=statistics.median(lat),
        p95_latency_s=p95,
        throughput_tps=done / elapsed if elapsed > 0 else 0.0,
        seed=seed,
    )


@dataclass
class _Tally:
    latencies: list[float] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)
    issued: int = 0
    elapsed: float = 0.0


def _split(total: int, parts: int) -> list[int]:
    q, r = divmod(total, parts)
    return [q + (i < r) for i in range(parts)]


def _drive(calls: list[Call], mode: str, pems: list[str], policy: str, seq: Iterator[int],
           count: Optional[int], duration: Optional[float], tally: _Tally) -> None:
    """Run one chunk of transactions on all workers and fold it into ``tally``."""
    results: queue.Queue = queue.Queue()
    seq_lock = threading.Lock()
    issued = [0]
    start = time.perf_counter()
    deadline = start + duration if duration else None

    def next_request() -> Optional[int]:
        with seq_lock:
            if count is not None and issued[0] >= count:
                return None
            if deadline is not None and time.perf_counter() >= deadline:
                return None
            issued[0] += 1
            return next(seq)

    def work(call: Call):
        while (idx := next_request()) is not None:
            t0 = time.perf_counter()
            try:
                ok = call(mode, pems[idx], policy)
                err = None if ok else "access denied"
            except (ServiceError, OSError, ValueError) as e:
                err = f"{type(e).__name__}: {e}"
            t1 = time.perf_counter()
            results.put((t1 - t0, t1, err))

    if len(calls) == 1:
        work(calls[0])
    else:
        threads = [threading.Thread(target=work, args=(c,), daemon=True) for c in calls]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    last = start
    done = 0
    while not results.empty():
        latency, finished, err = results.get_nowait()
        last = max(last, finished)
        done += 1
        if err is None:
            tally.latencies.append(latency)
        else:
            tally.failures.append(err)
    assert done == issued[0]
    tally.issued += issued[0]
    tally.elapsed += last - start


def run_cells(target, fx: Fixtures, config: BenchConfig, modes: list[str], n: int) -> list[CellResult]:
    """Measure ``modes`` at policy size ``n`` in interleaved rounds.

    Each round runs a slice of every mode's transactions, alternating the
    order between rounds, so slow drift on the host hits all modes alike.
    """
    policy = fx.policies[n].name if n in fx.policies else ""
    calls = [target.worker() for _ in range(config.concurrency)]
    rounds = config.rounds if config.duration_s else min(config.rounds, config.tx_count)
    counts = [None] * rounds if config.duration_s else _split(config.tx_count, rounds)
    slice_s = config.duration_s / rounds if config.duration_s else None

    plan = {}
    for mode in modes:
        pems = fx.child_pems if mode == "parent" else fx.basic_pems
        seq = workload(config.seed, mode, n, len(pems))
        for _ in range(config.warmup):
            if not calls[0](mode, pems[next(seq)], policy):
                raise BenchError(f"warmup transaction denied in {mode} n={n}")
        plan[mode] = (pems, seq, _Tally())

    for i in range(rounds):
        order = modes if i % 2 == 0 else modes[::-1]
        for mode in order:
            pems, seq, tally = plan[mode]
            _drive(calls, mode, pems, policy, seq, counts[i], slice_s, tally)

    out = []
    for mode in modes:
        tally = plan[mode][2]
        if len(tally.failures) > config.max_errors:
            raise BenchError(
                f"{len(tally.failures)} failed transactions in {mode} n={n}; first: {tally.failures[0]}"
            )
        assert len(tally.latencies) + len(tally.failures) == tally.issued
        out.append(_summarise(mode, n, tally.latencies, len(tally.failures), tally.elapsed, config.seed))
    return out


def run_cell(target, fx: Fixtures, config: BenchConfig, mode: str, n: int) -> CellResult:
    return run_cells(target, fx, config, [mode], n)[0]


def run_benchmark(config: BenchConfig, fixtures: Optional[Fixtures] = None) -> BenchReport:
    fx = fixtures or provision(config)
    target = make_target(config, fx)
    rows = []
    try:
        if "base-case" in config.modes:
            rows.append(run_cell(target, fx, config, "base-case", 0))
        paired = [m for m in ("basic", "parent") if m in config.modes]
        for n in config.checks_n:
            if paired:
                rows.extend(run_cells(target, fx, config, paired, n))
    finally:
        target.close()
    meta = {
        "target": target.label,
        "config": asdict(config),
        "python": platform.python_version(),
        "platform": platform.platform(),
        "cpu_count": os.cpu_count(),
        "started": dt.datetime.now(dt.timezone.utc).isoformat(),
    }
    return BenchReport(rows, meta)


def format_table(report: BenchReport) -> str:
    lines = [f"{'mode':<10} {'n':>4} {'tx':>6} {'err':>4} {'mean ms':>9} {'p95 ms':>9} {'tx/s':>9}"]
    for r in report.rows:
        lines.append(
            f"{r.mode:<10} {r.n:>4} {r.tx_count:>6} {r.errors:>4} "
            f"{r.mean_latency_s * 1e3:>9.3f} {r.p95_latency_s * 1e3:>9.3f} {r.throughput_tps:>9.1f}"
        )
    return "\n".join(lines)


@click.group()
def cli():
    """Benchmark access validation (basic vs parent vs base case)."""


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              default=None, help="bench.json; defaults apply when omitted.")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=Path("report.csv"),
              show_default=True)
@click.option("--quiet", is_flag=True, help="Do not print the summary table.")
def run(config_path, out, quiet):
    """Run the benchmark and write the CSV report."""
    try:
        config = BenchConfig.load(config_path) if config_path else BenchConfig()
        ca = CaState.load(config.ca) if config.ca else None
        report = run_benchmark(config, provision(config, ca))
    except (BenchError, ValueError, TypeError, OSError, ServiceError) as e:
        raise click.ClickException(str(e))
    report.write_csv(out)
    if not quiet:
        click.echo(format_table(report))
    click.echo(f"wrote {out}", err=True)


def main():
    cli(prog_name="aclbench")


if __name__ == "__main__":
    main()
