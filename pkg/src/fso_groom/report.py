import hashlib
import json
import os
import platform
from typing import Any, Dict, List, Optional, Sequence, Union

import networkx
import numpy as np
import pandas as pd
import scipy
import yaml

from fso_groom import __version__, logger
from fso_groom.config import ordered_cfg

FLOAT_FORMAT = "%.9g"

def is_fractional(value : Any) -> bool:
    try:
        value = float(value)
        return np.isfinite(value) and not value.is_integer()
    except (TypeError, ValueError):
        return False

def format_cell(
        cell : Any,
        digits : int = 4,
        max_length : int = 30
    ) -> str:
    """
    Autoformat a cell for a table.

    Fractional numbers are shown in general format with ``digits`` significant digits, long strings are shortened in the middle.

    Args:
        cell (`Any`): The cell to format.
        digits (`int`, optional): Significant digits for fractional numbers. Default is 4.
        max_length (`int`, optional): Maximum number of characters in the output string. Default is 30.

    Returns:
        out (`str`): The formatted cell string where `length <= max_length`.
    """
    if is_fractional(cell):
        return f"{float(cell):.{digits}g}"
    cell = str(cell)
    if len(cell) > max_length:
        left_size = (max_length - 3) // 2
        right_size = max_length - 3 - left_size
        return f"{cell[:left_size]}...{cell[-right_size:]}"
    return cell

def format_row(
        cells : Sequence[Any],
        widths : Sequence[int],
        align : str = "center"
    ) -> str:
    """
    Format a row of a table.

    Args:
        cells (`Sequence[Any]`): The cells of the row.
        widths (`Sequence[int]`): The widths of each column.
        align (`str`, optional): "center", "left" or "right". Defaults to "center".

    Returns:
        out (`str`): The formatted row.
    """
    row = "|"
    for cell, width in zip(cells, widths):
        match align:
            case "center":
                row += f" {cell:^{width}} |"
            case "left":
                row += f" {cell:<{width}} |"
            case "right":
                row += f" {cell:>{width}} |"
            case _:
                raise ValueError(f"Unknown alignment {align!r}.")
    return row

def format_table(df : pd.DataFrame, digits : int = 4) -> str:
    """Render a data frame as a bordered text table."""
    headers = [str(c) for c in df.columns]
    if len(df) == 0:
        return "(empty table)"
    rows = [[format_cell(v, digits=digits, max_length=max(30, len(h))) for v, h in zip(row, headers)] for row in df.itertuples(index=False)]
    widths = [max([len(h)] + [len(r[i]) for r in rows]) for i, h in enumerate(headers)]
    header = format_row(headers, widths, align="center")
    line = "-" * len(header)
    return "\n".join([line, header, line] + [format_row(r, widths, align="right") for r in rows] + [line])

def pretty_print_csv(csv_file : Union[str, os.PathLike]):
    """
    Pretty print a CSV file written by :func:`write_csv`.
    """
    try:
        df = pd.read_csv(csv_file)
    except pd.errors.EmptyDataError:
        print("pretty_print_csv: Empty CSV file.")
        return
    print(format_table(df))

def write_csv(df : pd.DataFrame, path : Union[str, os.PathLike]) -> Union[str, os.PathLike]:
    """
    Write a table with a fixed float format and ``\\n`` line endings, so identical data gives identical bytes.
    """
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info(f"Wrote {len(df)} rows to {path}")
    return path

def config_digest(cfg : dict) -> str:
    """sha256 of the canonical YAML dump of a config."""
    dump = yaml.safe_dump(dict(ordered_cfg(cfg)), sort_keys=False, default_flow_style=None)
    return hashlib.sha256(dump.encode("utf-8")).hexdigest()

def manifest(cfg : dict, seed : Optional[int]=None, outputs : Optional[Sequence[str]]=None) -> Dict[str, Any]:
    """Reproducibility record: config hash, seed and library versions. No timestamps."""
    return {
        "package" : "fso_groom",
        "version" : __version__,
        "config_sha256" : config_digest(cfg),
        "seed" : int(cfg.get("SEED", 0) if seed is None else seed),
        "python" : platform.python_version(),
        "numpy" : np.__version__,
        "scipy" : scipy.__version__,
        "pandas" : pd.__version__,
        "networkx" : networkx.__version__,
        "outputs" : sorted(outputs or []),
    }

def write_manifest(directory : Union[str, os.PathLike], cfg : dict, seed : Optional[int]=None, outputs : Optional[List[str]]=None) -> str:
    path = os.path.join(directory, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest(cfg, seed, outputs), f, indent=2, sort_keys=True)
        f.write("\n")
    return path
