"""
`proof verify` and `proof make` for inventory exposure proofs
"""

import argparse
import hashlib
import sys
from pathlib import Path

from ..core.errors import MalformedInput
from ..services import exposure_proof


def _hex(value: str, name: str) -> bytes:
    try:
        return bytes.fromhex(value.strip())
    except ValueError as e:
        raise MalformedInput(f"{name} is not hex: {e}") from e


def verify_command(args: argparse.Namespace) -> int:
    commitment = exposure_proof.commitment_from_hex(args.commitment)
    proof = exposure_proof.deserialize_proof(Path(args.proof_file).read_bytes())
    nonce = _hex(args.nonce, "nonce")
    item = args.item.encode("utf-8") if args.item is not None else proof.item
    if exposure_proof.verify_exposure(commitment, item, proof, nonce):
        print("proof ok")
        return 0
    print("proof rejected", file=sys.stderr)
    return 1


def make_command(args: argparse.Namespace) -> int:
    items = [item.encode("utf-8") for item in args.items.split(",") if item]
    salts = exposure_proof.generate_salts(len(items), [args.seed, 0])
    owner = hashlib.sha256(args.owner.encode("utf-8")).digest()
    commitment = exposure_proof.commit(items, salts, owner)
    nonce = exposure_proof.challenge([args.seed, 1])
    proof = exposure_proof.prove_exposure(
        items, salts, args.item.encode("utf-8"), commitment, nonce
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    commitment_hex = exposure_proof.commitment_to_hex(commitment)
    (out / "commitment.hex").write_text(commitment_hex + "\n", encoding="utf-8")
    (out / "nonce.hex").write_text(nonce.hex() + "\n", encoding="utf-8")
    (out / "proof.bin").write_bytes(exposure_proof.serialize_proof(proof))
    print(f"commitment={commitment_hex}")
    print(f"nonce={nonce.hex()}")
    return 0


def register(commands: argparse._SubParsersAction) -> None:
    parser = commands.add_parser("proof", help="Inventory exposure proofs")
    actions = parser.add_subparsers(dest="action", metavar="<action>")
    actions.required = True

    verify = actions.add_parser("verify", help="Verify a proof; exit 0 if accepted, 1 otherwise")
    verify.add_argument("commitment", help="Commitment hex (root, leaf count, owner)")
    verify.add_argument("proof_file", help="Serialized proof file")
    verify.add_argument("nonce", help="Challenge nonce hex")
    verify.add_argument("--item", help="Expected item (default: the item named in the proof)")
    verify.set_defaults(handler=verify_command)

    make = actions.add_parser("make", help="Write commitment.hex, proof.bin and nonce.hex")
    make.add_argument("--items", required=True, help="Comma-separated inventory items")
    make.add_argument("--item", required=True, help="Item to prove")
    make.add_argument("--owner", default="org0", help="Owner name, hashed into the commitment")
    make.add_argument("--seed", type=int, required=True, help="Seed for salts and nonce")
    make.add_argument("--out", required=True, help="Output directory")
    make.set_defaults(handler=make_command)
