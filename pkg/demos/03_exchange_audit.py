"""What actually crosses the domain boundary.

Runs one short training epoch with transcript recording on, then parses
each domain's outgoing byte stream: it is nothing but P2XG messages
holding the four noised matrices per step, never the clean embeddings.

    python demos/03_exchange_audit.py
"""

from collections import Counter

from privcdr.datasets import SyntheticSpec, generate_synthetic_cdr, prepare_dataset
from privcdr.exchange import HEADER, audit_transcript
from privcdr.model import TrainConfig
from privcdr.training import fit


def main():
    raw = generate_synthetic_cdr(SyntheticSpec(n_users=80, n_items_a=60, n_items_b=60, seed=1))
    data = prepare_dataset(raw.tables, raw.features, k=3, seed=1)
    cfg = TrainConfig(epochs=1, eval_negatives=30)

    for transport in ("inproc", "socket"):
        rep = fit(data, cfg, transport=transport, record_transcript=True)
        print(f"[{transport}] digests {rep.transcript_digest}")

    for d, blob in rep.transcripts.items():
        msgs = audit_transcript(blob)
        kinds = Counter(m.matrix for m in msgs)
        shape = msgs[0].payload.shape
        print(f"domain {d}: {len(blob)} bytes, {len(msgs)} messages of {HEADER.size}+{shape[0]}x{shape[1]}x4 bytes, "
              f"lambda {msgs[0].lam:g}, kinds {dict(kinds)}")


if __name__ == "__main__":
    main()
