"""
Input documents and report serialization.

Inputs are JSON (chains, observables, coefficient columns, Fourier
coefficients); a coefficient file may also be plain text with one a_i per
line. Reports are JSON with a top-level `version`.
"""
import json
import math
import numpy as np

from pathlib import Path

from src.bernoulli_shift import FourierObservable
from src.errors import DocumentError
from src.markov_core import observable, validate_chain
from src.sequence_models import CoeffArray, CoeffSource, CustomArray, make_generator

VERSION = '1.0.0'
# exact integer parameters; everything else is parsed as float
INT_PARAMS = {'example5_root'}


def load_json(path):
    path = Path(path)
    try:
        with path.open('r', encoding='utf-8') as handle:
            doc = json.load(handle)
    except FileNotFoundError:
        raise DocumentError(f"no such file {path}", field=str(path))
    except json.JSONDecodeError as exc:
        raise DocumentError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})",
                            field=str(path))
    if not isinstance(doc, dict):
        raise DocumentError(f"{path}: expected a JSON object", field=str(path))
    return doc


def _require(doc, key, where):
    if key not in doc:
        raise DocumentError(f"{where}: missing field {key!r}", field=key)
    return doc[key]


def chain_from_doc(doc, where='chain'):
    Q = _require(doc, 'Q', where)
    if not isinstance(Q, list) or not Q:
        raise DocumentError(f"{where}: Q must be a non-empty list of rows", field='Q')
    if 'n_states' in doc and doc['n_states'] != len(Q):
        raise DocumentError(f"{where}: n_states={doc['n_states']} but Q has {len(Q)} rows",
                            field='n_states')
    if any(not isinstance(row, list) or len(row) != len(Q) for row in Q):
        raise DocumentError(f"{where}: Q must be a list of {len(Q)} rows of length {len(Q)}",
                            field='Q')
    Q = _floats(Q, where, 'Q')
    pi = doc.get('pi')
    return validate_chain(Q, None if pi is None else _floats(pi, where, 'pi'))


def load_chain(path):
    return chain_from_doc(load_json(path), str(path))


def load_observable(path, chain, center=False):
    doc = load_json(path)
    values = _floats(_require(doc, 'values', str(path)), str(path), 'values')
    return observable(chain, values, center=center)


def parse_generator(text):
    """NAME[:p1[:p2...]] -> CoeffSource."""
    name, *params = text.split(':')
    cast = int if name in INT_PARAMS else float
    try:
        values = [cast(p) for p in params]
    except ValueError:
        raise DocumentError(f"bad generator parameters in {text!r}", field='generator')
    return make_generator(name, values)


def _floats(values, where, field):
    try:
        return np.asarray(values, dtype=float)
    except (TypeError, ValueError) as exc:
        raise DocumentError(f"{where}: {field} must be numeric ({exc})", field=field)


def _complex_values(values, where='values', field='values'):
    if not isinstance(values, list):
        raise DocumentError(f"{where}: {field} must be a list", field=field)
    if not any(isinstance(v, list) for v in values):
        return _floats(values, where, field)
    try:
        return np.array([complex(*v) if isinstance(v, list) else complex(v) for v in values])
    except (TypeError, ValueError) as exc:
        raise DocumentError(f"{where}: {field} must hold numbers or [re, im] pairs ({exc})",
                            field=field)


def source_from_doc(doc, where='coefficients'):
    if 'generator' in doc:
        name = doc['generator']
        params = doc.get('params', [])
        cast = int if name in INT_PARAMS else float
        try:
            params = [cast(p) for p in params]
        except (TypeError, ValueError):
            raise DocumentError(f"{where}: bad params {params!r}", field='params')
        return make_generator(name, params)
    return CustomArray(_complex_values(_require(doc, 'values', where)))


def load_coefficients(path):
    """A single column: JSON (generator or values) or text with one a_i per line."""
    path = Path(path)
    if path.suffix.lower() == '.json':
        return source_from_doc(load_json(path), str(path))
    try:
        lines = path.read_text(encoding='utf-8').split()
    except FileNotFoundError:
        raise DocumentError(f"no such file {path}", field=str(path))
    try:
        return CustomArray([float(x) for x in lines])
    except ValueError as exc:
        raise DocumentError(f"{path}: {exc}", field=str(path))


def array_from_doc(doc, where='columns'):
    columns = _require(doc, 'columns', where)
    if not isinstance(columns, dict):
        raise DocumentError(f"{where}: columns must map column indices to columns",
                            field='columns')
    out = {}
    for key, col in columns.items():
        field = f"columns[{key}]"
        try:
            j = int(key)
        except ValueError:
            raise DocumentError(f"{where}: column index {key!r} is not an integer", field=field)
        if isinstance(col, dict):
            out[j] = source_from_doc(col, f"{where}[{key}]")
        else:
            out[j] = _complex_values(col, where, field)
    return CoeffArray(out)


def load_array(path):
    """A superlinear document; a single-column file is accepted as column 0."""
    path = Path(path)
    if path.suffix.lower() != '.json':
        return CoeffArray({0: load_coefficients(path)})
    doc = load_json(path)
    if 'columns' in doc:
        return array_from_doc(doc, str(path))
    return CoeffArray({0: source_from_doc(doc, str(path))})


def load_fourier(path):
    doc = load_json(path)
    coeffs = _require(doc, 'coeffs', str(path))
    try:
        values = {int(r): complex(*c) if isinstance(c, list) else complex(c)
                  for r, c in coeffs.items()}
    except (TypeError, ValueError) as exc:
        raise DocumentError(f"{path}: bad coefficient ({exc})", field='coeffs')
    return FourierObservable(values, bool(doc.get('real', False)))


def to_jsonable(obj):
    """Plain JSON types; complex as [re, im], non-finite floats as strings."""
    if hasattr(obj, 'as_dict'):
        return to_jsonable(obj.as_dict())
    if isinstance(obj, CoeffSource):
        return obj.describe()
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [to_jsonable(obj.real), to_jsonable(obj.imag)]
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            # repr of a double is its shortest round-trip form (at most 17 digits)
            return x
        return 'nan' if math.isnan(x) else ('inf' if x > 0 else '-inf')
    return obj


def dump_report(report):
    return json.dumps(to_jsonable(report), indent=2)


def write_report(report, out=None):
    text = dump_report(report)
    if out is None:
        print(text)
    else:
        Path(out).write_text(text + '\n', encoding='utf-8')
    return text
