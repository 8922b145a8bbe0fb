import pytest

from tailrlab.plots import *

ERROR_ROWS = [(0, -5.0, -3.0, 1, 1.0, 1), (1, -3.0, -1.0, 0, -0.25, 2), (1, -3.0, -1.0, 1, 1.0, 1)]


@pytest.mark.parametrize('draw,args', [
    (density_curves, ([(-1.0, 0.1, 0.2, 0.3), (0.0, 0.4, 0.3, 0.2), (1.0, 0.1, 0.2, 0.1)],)),
    (error_map, (ERROR_ROWS,)),
    (overestimation, ({'mle': [(3, 1.0, 2), (5, 3.0, 1)], 'tailr': []},)),
    (weight_curve, ([(0.1, 0.0, 0.0), (0.1, 1.0, 1.0), (1.0, 0.0, 1.0), (1.0, 1.0, 1.0)],)),
    (gamma_sweep, ([(0.01, 'a', 1.0, 2.0), (1.0, 'b', 1.5, 2.5)], ('gamma', 'objective', 'ppl', 'bleu4'))),
])
def test_figures_are_written_reproducibly(tmp_path, draw, args):
    first = draw(*args, tmp_path / 'first' / 'figure.svg')
    second = draw(*args, tmp_path / 'second.svg')
    assert first.read_text(encoding='utf-8').startswith('<?xml')
    assert first.read_bytes() == second.read_bytes()
