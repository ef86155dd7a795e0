"""Validate a dataset manifest against the taxonomy and print its class histogram.
   Usage: python validate_manifest.py manifest.tsv [taxonomy.tsv]
   Exits 3 on the first bad line (line number in the message).
"""
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent
sys.path.insert(0, str(ROOT / "src"))

from insectcam.errors import InsectcamError
from insectcam.evalkit import class_histogram, load_manifest
from insectcam.taxonomy import load_taxonomy


def main():
    if len(sys.argv) < 2:
        print(__doc__)
        sys.exit(2)
    manifest_path = Path(sys.argv[1])
    try:
        tree = load_taxonomy(sys.argv[2] if len(sys.argv) > 2 else None)
        manifest = load_manifest(manifest_path, tree)
    except InsectcamError as e:
        print(f"Manifest: {manifest_path.name}")
        print(f"  Invalid: {e}")
        sys.exit(e.exit_code)

    hist = class_histogram(manifest)
    tagged = sum(1 for r in manifest.records if r.split)
    print(f"Manifest: {manifest_path.name}")
    print(f"  Records:   {len(manifest)}")
    print(f"  Tagged:    {tagged}")
    print(f"  Imbalance: {hist.ratio:.2f} (largest / smallest class)")
    for species, n in hist.counts.items():
        if n:
            print(f"    {species:<28} {n}")
    print("  OK - all records pass.")


if __name__ == "__main__":
    main()
