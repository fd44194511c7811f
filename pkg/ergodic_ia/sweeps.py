import json
from pathlib import Path
from typing import Dict, List, Optional

import structlog
from pydantic import ValidationError

from ergodic_ia.errors import ConfigurationError
from ergodic_ia.models import RunConfig, SweepDefinition

logger = structlog.get_logger()


class SweepCatalog:
    """Named experiment sweeps: the built-in ones plus any loaded from JSON"""

    def __init__(self):
        self.builtin_sweeps = {
            "dof_table": {
                "description": "Closed-form sum-DoF of the proposed and retrospective schemes, K = 3..50",
                "runs": [{"scheme": "formulas", "k_range": [3, 50]}],
            },
            "slopes_k3": {
                "description": "High-SNR sum-rate slopes at K = 3",
                "runs": [
                    {"scheme": scheme, "num_users": 3, "snr_db_list": [40.0, 60.0], "episodes": 10_000}
                    for scheme in ("baseline", "delayed_csit", "delayed_output_fb")
                ],
            },
            "exactness": {
                "description": "Noiseless genie-paired decoding, K = 3..8",
                "runs": [
                    {"scheme": scheme, "num_users": k, "noiseless": True, "episodes": 200}
                    for scheme in ("delayed_csit", "delayed_time_index", "delayed_output_fb")
                    for k in range(3, 9)
                ],
            },
        }
        self.custom_sweeps: Dict[str, SweepDefinition] = {}

    def list_sweeps(self) -> List[str]:
        return sorted(set(self.builtin_sweeps) | set(self.custom_sweeps))

    def get_sweep(self, name: str, seed: Optional[int] = None) -> SweepDefinition:
        if name in self.custom_sweeps:
            return self.custom_sweeps[name]
        if name not in self.builtin_sweeps:
            raise ConfigurationError(
                f"unknown sweep {name!r}; available: {', '.join(self.list_sweeps())}"
            )

        data = self.builtin_sweeps[name]
        runs = [dict(run, seed=seed) if seed is not None else run for run in data["runs"]]
        return SweepDefinition(name=name, description=data["description"], runs=runs)

    def load_file(self, path: str) -> SweepDefinition:
        """Parse a sweep definition file and register it under its name"""
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"{path}: invalid JSON ({e})") from e

        try:
            sweep = SweepDefinition.model_validate(raw)
        except ValidationError as e:
            raise ConfigurationError(f"{path}: {e}") from e

        if sweep.name in self.builtin_sweeps:
            logger.warning("Sweep file shadows a built-in sweep", sweep=sweep.name)
        self.custom_sweeps[sweep.name] = sweep
        logger.info("Sweep loaded", sweep=sweep.name, runs=len(sweep.runs), path=path)
        return sweep


def member_output_path(base: Optional[str], run: RunConfig) -> Optional[str]:
    """CSV path of one sweep member: `base` suffixed by scheme and K"""
    if base is None:
        return None
    path = Path(base)
    if run.k_range is not None:
        suffix = f"{run.scheme.value}_K{run.k_range[0]}-{run.k_range[1]}"
    else:
        suffix = f"{run.scheme.value}_K{run.num_users}"
    return str(path.with_name(f"{path.stem}_{suffix}{path.suffix or '.csv'}"))


sweep_catalog = SweepCatalog()
