"""Data loading and persistence utilities."""
import hashlib
import json
import os
from decimal import Decimal, InvalidOperation, ROUND_HALF_UP

from .config import logger
from .errors import InvalidArgumentError


def load_json(filename):
    """Load a JSON document.

    Args:
        filename: Path to the JSON file

    Returns:
        Parsed JSON value

    Raises:
        FileNotFoundError: If the file does not exist
        InvalidArgumentError: If the file is not valid JSON (message carries line/column)
    """
    try:
        with open(filename, 'r', encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        logger.error(f"Error loading {filename}: {e}")
        raise InvalidArgumentError(
            f"{filename}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}"
        ) from e
    except Exception as e:
        logger.error(f"Error loading {filename}: {e}")
        raise


def to_cents(value):
    """Convert a currency amount (str, int, float or Decimal) to integer cents.

    Rounds half-up to the nearest cent.
    """
    if isinstance(value, bool):
        raise InvalidArgumentError(f"not a currency amount: {value!r}")
    try:
        amount = Decimal(str(value).strip().lstrip('$').replace(',', ''))
    except InvalidOperation as e:
        raise InvalidArgumentError(f"not a currency amount: {value!r}") from e
    if not amount.is_finite():
        raise InvalidArgumentError(f"not a currency amount: {value!r}")
    return int((amount * 100).quantize(Decimal('1'), rounding=ROUND_HALF_UP))


def cents_to_str(cents):
    """Two-decimal string without currency sign, e.g. ``-4.50``."""
    sign = '-' if cents < 0 else ''
    cents = abs(int(cents))
    return f"{sign}{cents // 100}.{cents % 100:02d}"


def format_currency(cents):
    """Dollar rendering used in prompts, e.g. ``$9.00``."""
    text = cents_to_str(cents)
    return f"-${text[1:]}" if text.startswith('-') else f"${text}"


def write_json(obj, filename, indent=2):
    """Write ``obj`` as deterministic JSON (sorted keys, trailing newline)."""
    os.makedirs(os.path.dirname(os.path.abspath(filename)), exist_ok=True)
    with open(filename, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(obj, f, indent=indent, sort_keys=True)
        f.write('\n')
    logger.debug(f"Wrote {filename}")
    return filename


def sha256_text(text):
    """Hex SHA-256 of a UTF-8 string."""
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


def dict_diff(old, new, prefix=''):
    """List the dotted keys whose values differ between two nested dicts.

    Returns:
        list: Lines of the form ``key: old -> new``
    """
    lines = []
    for key in sorted(set(old) | set(new), key=str):
        name = f"{prefix}{key}"
        a, b = old.get(key, '<missing>'), new.get(key, '<missing>')
        if isinstance(a, dict) and isinstance(b, dict):
            lines.extend(dict_diff(a, b, prefix=f"{name}."))
        elif a != b:
            lines.append(f"{name}: {a!r} -> {b!r}")
    return lines


def safe_filename(name):
    """``name`` with every character outside ``[A-Za-z0-9-_.]`` replaced by ``_``."""
    return ''.join(c if c.isalnum() or c in '-_.' else '_' for c in str(name))
