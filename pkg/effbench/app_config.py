from pathlib import Path

from effbench.consts import LOG_RETENTION


class Config(object):
    DEBUG = False
    LOG_DIR = Path(__file__).resolve().parents[1] / "logs"
    LOG_LEVEL = "INFO"
    LOG_RETENTION = LOG_RETENTION
    RUNS_DIR = Path("runs")
    SYNTHETIC_SAMPLES = 600
    SYNTHETIC_DIFFICULTY = 0.5
    SYNTHETIC_SEED = 1

    def update(self, newdata):
        for key, value in newdata.items():
            setattr(self, key, value)

    def to_dict(self) -> dict:
        return {
            key: getattr(self, key)
            for key in dir(self)
            if key.isupper() and not key.startswith("_")
        }
