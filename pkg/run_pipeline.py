"""Run the end-to-end pipeline from repo root. Usage: python run_pipeline.py [config.yaml]"""
import logging
import sys
from pathlib import Path

root = Path(__file__).resolve().parent
sys.path.insert(0, str(root / "src"))

from insectcam.errors import InsectcamError
from insectcam.pipeline import RunConfig, run_pipeline

if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        record = run_pipeline(RunConfig.load(sys.argv[1] if len(sys.argv) > 1 else None))
    except InsectcamError as e:
        logging.error("%s", e)
        sys.exit(e.exit_code)
    print("Run:", record.run_id)
    print("  Dir:      ", record.artifacts["run_dir"])
    print("  Crops:    ", record.metrics["crops"])
    print("  Accuracy: ", record.metrics["top1_accuracy"])
