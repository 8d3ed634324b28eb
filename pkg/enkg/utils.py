"""Utility functions.
"""
import math

def to_float(val, sub_val):
    """Try to convert 'val' to a float.  If it fails, return 'sub_val' instead.
    Remove any blanks before trying to convert.
    """
    try:
        if isinstance(val, str):
            val = val.strip()
        return float(val)
    except (TypeError, ValueError):
        return sub_val

def to_float_list(val):
    """Converts a comma-separated string (or a list) into a list of floats.
    Returns None if any element cannot be converted.
    """
    if isinstance(val, str):
        items = [item for item in val.split(',') if len(item.strip())]
    else:
        items = list(val)
    floats = [to_float(item, None) for item in items]
    if any(f is None for f in floats):
        return None
    return floats

def is_null(val):
    """Returns True if 'val' is None, NaN, or a blank string.
    Returns False otherwise.
    """
    if val is None:
        return True

    if isinstance(val, float) and math.isnan(val):
        return True

    if isinstance(val, str) and len(val.strip())==0:
        return True

    return False

def json_number(val):
    """Returns 'val' as a float suitable for JSON output; NaN becomes None.
    """
    return None if is_null(val) else float(val)
