import json

import pytest

from fabacl.assets import AccessDenied, AssetContract, MethodPolicyBinding
from fabacl.contract import Reason, SatisfiedBy
from fabacl.identity import make_parent_link
from fabacl.ledger import AssetExistsError, AssetNotFoundError
from fabacl.policy import Equals, Includes, Or, PolicyDocument

IPFS = "QmYwAPJzv5CZsnA625s3Xf2nemtYgPpHdWEz79ojWnPbdG"


@pytest.fixture
def contract(ledger):
    ledger.register_policy(PolicyDocument("CreatePolicy", Equals("role", "writer"), 1))
    ledger.register_policy(PolicyDocument("ReadPolicy", Or([Equals("role", "writer"), Includes("groups", "readers")]), 1))
    ledger.register_policy(PolicyDocument("UpdatePolicy", Equals("role", "writer"), 1))
    ledger.register_policy(PolicyDocument("DeletePolicy", Equals("role", "admin"), 1))
    return AssetContract(ledger)


@pytest.fixture
def writer(issue):
    return issue({"role": "writer"})[0]


@pytest.fixture
def reader(issue):
    return issue({"role": "guest", "groups": "staff,readers"})[0]


def test_create_then_read(contract, writer):
    rec = contract.create_asset(writer, "doc1", "report.pdf", IPFS)
    assert contract.read_asset(writer, "doc1") == rec
    assert rec.owner == writer.digest_hex
    assert rec.ipfs_hash == IPFS


def test_reader_can_only_read(contract, writer, reader):
    contract.create_asset(writer, "doc1", "report.pdf", IPFS)
    before_rev = contract.ledger.revision
    before = contract.ledger.snapshot()
    assert contract.read_asset(reader, "doc1").file_name == "report.pdf"
    for call in (
        lambda: contract.update_asset(reader, "doc1", file_name="evil.pdf"),
        lambda: contract.delete_asset(reader, "doc1"),
    ):
        with pytest.raises(AccessDenied) as exc:
            call()
        assert exc.value.decision.reason is Reason.POLICY_UNSATISFIED
    assert contract.ledger.revision == before_rev
    assert contract.ledger.snapshot() == before


def test_denied_create_changes_nothing(contract, reader):
    rev = contract.ledger.revision
    with pytest.raises(AccessDenied) as exc:
        contract.create_asset(reader, "doc9", "x", IPFS)
    assert exc.value.method == "create"
    assert contract.ledger.revision == rev
    assert contract.ledger.get_asset("doc9") is None


def test_update_and_delete(contract, writer, issue):
    contract.create_asset(writer, "doc1", "a.pdf", IPFS)
    rec = contract.update_asset(writer, "doc1", ipfs_hash="QmOther")
    assert (rec.file_name, rec.ipfs_hash) == ("a.pdf", "QmOther")
    admin = issue({"role": "admin"})[0]
    contract.delete_asset(admin, "doc1")
    with pytest.raises(AssetNotFoundError):
        contract.read_asset(writer, "doc1")


def test_errors(contract, writer):
    contract.create_asset(writer, "doc1", "a", IPFS)
    with pytest.raises(AssetExistsError):
        contract.create_asset(writer, "doc1", "a", IPFS)
    with pytest.raises(AssetNotFoundError):
        contract.update_asset(writer, "nope", file_name="x")
    with pytest.raises(ValueError):
        contract.create_asset(writer, "doc2", "a", "")


def test_parent_satisfied_create_records_child_as_owner(contract, issue):
    parent, pkey = issue({"role": "writer"})
    contract.ledger.store_certificate(parent)
    child, _ = issue({"role": "device"}, parent=make_parent_link(parent, pkey))
    rec = contract.create_asset(child, "doc1", "a", IPFS)
    assert rec.owner == child.digest_hex != parent.digest_hex


def test_unbound_policy_is_denied(ledger, writer):
    contract = AssetContract(ledger, MethodPolicyBinding(read="NoSuchPolicy"))
    with pytest.raises(AccessDenied) as exc:
        contract.read_asset(writer, "doc1")
    assert exc.value.decision.reason is Reason.POLICY_NOT_FOUND


def test_rebinding_one_method_leaves_others(contract, writer, reader):
    contract.create_asset(writer, "doc1", "a", IPFS)
    swapped = AssetContract(contract.ledger, MethodPolicyBinding(update="ReadPolicy"))
    assert swapped.update_asset(reader, "doc1", file_name="b").file_name == "b"
    for c in (contract, swapped):
        with pytest.raises(AccessDenied):
            c.delete_asset(reader, "doc1")
        assert c.read_asset(reader, "doc1").id == "doc1"


def test_bindings_file(tmp_path):
    path = tmp_path / "bindings.json"
    path.write_text(json.dumps({"create": "C", "read": "R", "update": "U", "delete": "D"}))
    b = MethodPolicyBinding.load(path)
    assert b.to_obj() == {"create": "C", "read": "R", "update": "U", "delete": "D"}
    with pytest.raises(ValueError):
        MethodPolicyBinding.from_obj({"create": "C"})
    assert MethodPolicyBinding().read == "ReadPolicy"
