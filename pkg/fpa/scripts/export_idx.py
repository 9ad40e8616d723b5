"""
IDX Export Script

Writes the synthetic dataset as IDX files plus a manifest, so experiments can run
through the IDX loading path.

Usage:
    python scripts/export_idx.py OUT_DIR [--train N] [--test N] [--seed S]
"""

import argparse
import sys
from pathlib import Path

# Add fpa/ to path
package_dir = Path(__file__).parent.parent
sys.path.insert(0, str(package_dir))

from adapters import ArtifactAdapter
from models import Split
from services.data_service import gen_synthetic, write_idx


def export_synthetic(out_dir: Path, num_train: int, num_test: int, seed: int) -> Path:
    """Write train/test IDX pairs and manifest.json into out_dir."""
    print("=" * 80)
    print("EXPORTING SYNTHETIC DATASET AS IDX")
    print("=" * 80)

    out_dir.mkdir(parents=True, exist_ok=True)
    train = gen_synthetic(num_train, seed, Split.TRAIN)
    test = gen_synthetic(num_test, seed, Split.TEST)
    write_idx(train, out_dir / "train-images-idx3-ubyte", out_dir / "train-labels-idx1-ubyte")
    write_idx(test, out_dir / "test-images-idx3-ubyte", out_dir / "test-labels-idx1-ubyte")

    manifest = ArtifactAdapter.write_json(
        out_dir / "manifest.json",
        {
            "train_images": "train-images-idx3-ubyte",
            "train_labels": "train-labels-idx1-ubyte",
            "test_images": "test-images-idx3-ubyte",
            "test_labels": "test-labels-idx1-ubyte",
            "normalization": "range",
            "class_names": train.class_names,
        },
    )
    print(f"\n✓ {num_train} train / {num_test} test images written to {out_dir}")
    print(f"  - manifest: {manifest}")
    return manifest


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    parser.add_argument("out_dir", type=Path)
    parser.add_argument("--train", type=int, default=6000)
    parser.add_argument("--test", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    export_synthetic(args.out_dir, args.train, args.test, args.seed)
    return 0


if __name__ == "__main__":
    sys.exit(main())
