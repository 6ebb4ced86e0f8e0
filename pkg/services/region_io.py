import csv
import json
import logging
import os
from typing import Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel

from models.errors import ConfigError
from models.schemas import VertexRecord
from services.polytope import CoSet
from services.region_ss import RegionVertexSet

logger = logging.getLogger(__name__)


def output_path(directory: str, name: str, mode: str, suffix: str) -> str:
    os.makedirs(directory, exist_ok=True)
    return os.path.join(directory, f"{name}_{mode}_{suffix}")


def write_vertices_csv(path: str, region: RegionVertexSet) -> str:
    """
    Write region vertices with their generating labels

    Args:
        path: Target CSV file
        region: Vertex set

    Returns:
        The path written
    """
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["policy", "alpha"] + [f"mu_{i}" for i in range(region.dim)])
        for record in region.records():
            alpha = ";".join(repr(float(a)) for a in record.alpha)
            writer.writerow([record.policy, alpha] + [repr(float(v)) for v in record.mu])
    logger.info(f"Wrote {len(region)} vertices to {path}")
    return path


def read_vertices(path: str) -> Tuple[CoSet, List[VertexRecord]]:
    """
    Parse a vertex file written by write_vertices_csv

    Args:
        path: CSV file

    Returns:
        (CoSet of the vertices, records in file order)
    """
    records = []
    try:
        with open(path, "r", newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            if header[:2] != ["policy", "alpha"]:
                raise ConfigError(f"{path} is not a vertex file (header {header})")
            for row in reader:
                alpha = [float(a) for a in row[1].split(";")] if row[1] else []
                records.append(VertexRecord(policy=row[0], alpha=alpha, mu=[float(v) for v in row[2:]]))
    except (OSError, StopIteration, ValueError) as e:
        raise ConfigError(f"Cannot read vertex file {path}: {e}") from e

    dim = len(header) - 2
    points = [r.mu for r in records] or [[0.0] * dim]
    return CoSet.from_points(points), records


def write_summary_json(path: str, summary: BaseModel, extra: Optional[Dict] = None) -> str:
    payload = summary.model_dump()
    if extra:
        payload.update(extra)
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
    logger.info(f"Wrote summary to {path}")
    return path


def write_rows_csv(path: str, header: Sequence[str], rows: Sequence[Sequence]) -> str:
    """Plain table output (overlay data, simulation tables, K0 profiles)"""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
    logger.info(f"Wrote {len(rows)} rows to {path}")
    return path
