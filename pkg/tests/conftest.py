import numpy as np
import pytest

from wqimpute.data import SparseTensor


def write_csv(path, rows, header="station_id,parameter,timestamp,value"):
    lines = [header] + [",".join(str(c) for c in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def csv_writer(tmp_path):
    def _write(rows, name="data.csv", header="station_id,parameter,timestamp,value"):
        return write_csv(tmp_path / name, rows, header)
    return _write


def make_tensor(dims=(3, 2, 4), n_entries=None, seed=0, values=None):
    """A small dense-ish tensor with deterministic entries for split/scale tests."""
    n_i, n_j, n_k = dims
    cube = n_i * n_j * n_k
    if n_entries is None:
        n_entries = cube
    rng = np.random.default_rng(seed)
    flat = np.sort(rng.choice(cube, size=n_entries, replace=False))
    ii, jj, kk = np.unravel_index(flat, dims)
    if values is None:
        values = rng.uniform(1.0, 9.0, n_entries)
    return SparseTensor(
        dims=dims,
        i=ii.astype(np.intp), j=jj.astype(np.intp), k=kk.astype(np.intp),
        values=np.asarray(values, dtype=np.float64),
        station_ids=tuple(f"s{n}" for n in range(n_i)),
        parameter_names=tuple(f"p{n}" for n in range(n_j)),
        time_stamps=tuple(f"2021-01-01T{n:02d}:00:00" for n in range(n_k)),
    )
