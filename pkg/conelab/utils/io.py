"""
Run directory I/O.

Tables are CSV written through pandas with 17 significant digits, so values
round-trip exactly; reports are JSON with sorted keys and NaN written as null.
Only manifest.json carries timestamps, so every other file of a run is
byte-reproducible and comparable by digest.
"""

import hashlib
import json
import logging
import math
import platform
from importlib import metadata
from pathlib import Path
from typing import Any, Iterable, Optional

import numpy as np
import pandas as pd

from conelab import SCHEMA_VERSION, __version__
from conelab.models import AsymptoticReport, RunManifest, TrajectoryRecord
from conelab.utils.timezone import utc_timestamp

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'


def trajectory_columns(r: int) -> list:
    """Fixed column order of trajectory.csv."""
    return (['s', 't', 'L'] + [f'X{i}' for i in range(1, r + 1)]
            + [f'Y{i}' for i in range(1, r + 1)]
            + ['u', 'S1', 'S2', 'Rcal', 'Z', 'conservation_residual'])


def _strided(n: int, stride: int) -> np.ndarray:
    idx = np.arange(0, n, max(1, stride))
    if idx[-1] != n - 1:
        idx = np.append(idx, n - 1)
    return idx


def trajectory_frame(record: TrajectoryRecord, stride: int = 1) -> pd.DataFrame:
    """Per-sample table of a record; the last sample is always kept."""
    r = record.spec.r
    idx = _strided(len(record), stride)
    data = np.column_stack([
        record.s, record.t, record.L, record.X, record.Y, record.u,
        record.s1, record.s2, record.rcal, record.z, record.residual,
    ])[idx]
    return pd.DataFrame(data, columns=trajectory_columns(r))


def subsystem_frame(traj, stride: int = 1) -> pd.DataFrame:
    idx = _strided(len(traj.s), stride)
    return pd.DataFrame({
        's': traj.s[idx],
        'X': traj.x[idx],
        'Y': traj.y[idx],
        'X_over_Y2': traj.ratio[idx],
        'Rcal_sub': traj.rcal[idx],
    })


def bracket_frame(history: Iterable) -> pd.DataFrame:
    columns = ['C', 'sigma1', 'uncertainty', 'low_confidence', 'phase',
               'certified_above', 'certified_below', 'error']
    return pd.DataFrame([sample.to_dict() for sample in history], columns=columns)


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    return path


def to_jsonable(value: Any) -> Any:
    """Plain JSON types; non-finite floats become None."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, Path):
        return str(value)
    return value


def dumps(data: Any) -> str:
    return json.dumps(to_jsonable(data), indent=2, sort_keys=True, allow_nan=False) + '\n'


def write_json(data: Any, path: Path) -> Path:
    Path(path).write_text(dumps(data))
    return path


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b''):
            digest.update(chunk)
    return digest.hexdigest()


def config_digest(cfg: dict) -> str:
    """Short digest of a config's canonical JSON form."""
    return hashlib.sha256(dumps(cfg).encode()).hexdigest()[:12]


def default_run_dir(command: str, cfg: dict, root: Path) -> Path:
    return Path(root) / f'{command}-{config_digest(cfg)}'


def environment_info() -> dict:
    versions = {'python': platform.python_version(), 'conelab': __version__}
    for package in ('numpy', 'scipy', 'pandas', 'jsonschema'):
        try:
            versions[package] = metadata.version(package)
        except metadata.PackageNotFoundError:
            versions[package] = None
    return versions


def summary_dict(record: TrajectoryRecord, report: Optional[AsymptoticReport]) -> dict:
    """Fields of summary.json for one trajectory."""
    summary = {
        'schema_version': SCHEMA_VERSION,
        'classification': record.classification,
        'status': record.status,
        'problem': record.spec.to_dict(),
        'C': record.params.C,
        'fbar': list(record.params.fbar),
        't0': record.seed.t0,
        'seed_order': record.seed.order,
        'seed_est_error': record.seed.est_error,
        'terminal_event': record.event.to_dict(),
        'samples': len(record),
        'flags': list(record.flags),
        'options': record.options.to_dict() if record.options else None,
    }
    if report is not None:
        summary.update({
            'sigma': report.sigma,
            'sigma_uncertainty': report.sigma_uncertainty,
            'sigma_divergent': report.sigma_divergent,
            'refined': report.refined,
            'scal_limit': report.scal_limit,
            'cone_scal_coeff': report.cone_scal_coeff,
            'low_confidence': report.low_confidence,
            'analysis_flags': report.flags,
            'fit': report.fit,
        })
    return summary


def start_manifest(command: str, cfg: dict) -> RunManifest:
    return RunManifest(
        command=command,
        config=cfg,
        version=__version__,
        schema_version=SCHEMA_VERSION,
        started_at=utc_timestamp(),
        environment=environment_info(),
    )


def finish_manifest(manifest: RunManifest, run_dir: Path, files: Iterable[Path],
                    status: str, exit_code: int) -> Path:
    """Digest every output file and write manifest.json."""
    run_dir = Path(run_dir)
    manifest.files = [
        {'name': Path(p).name, 'sha256': sha256_file(p), 'bytes': Path(p).stat().st_size}
        for p in sorted(files, key=lambda p: Path(p).name)
    ]
    manifest.status = status
    manifest.exit_code = exit_code
    manifest.finished_at = utc_timestamp()
    path = write_json(manifest.to_dict(), run_dir / 'manifest.json')
    logger.info('Wrote %d files to %s (%s)', len(manifest.files), run_dir, status)
    return path
