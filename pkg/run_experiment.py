"""Full frames vs crops on the synthetic dataset. Usage: python run_experiment.py [experiment.yaml]"""
import logging
import sys
from pathlib import Path

root = Path(__file__).resolve().parent
sys.path.insert(0, str(root / "src"))

from insectcam.errors import InsectcamError
from insectcam.pipeline import experiment_full_vs_cropped, load_experiment_config

if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        report = experiment_full_vs_cropped(load_experiment_config(sys.argv[1] if len(sys.argv) > 1 else None))
    except InsectcamError as e:
        logging.error("%s", e)
        sys.exit(e.exit_code)
    print(f"Full:    {report['accuracy_a']:.4f}")
    print(f"Cropped: {report['accuracy_b']:.4f}")
    print(f"Delta:   {report['overall_delta']:+.4f}")
    if report["worst_regression"]:
        print(f"Worst regression: {report['worst_regression']}")
