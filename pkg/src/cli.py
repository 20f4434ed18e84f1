"""
Command-line surface: argument parsing, dispatch and the worked examples.

Every command returns a report dict that embeds the tool version and the
full effective RunConfig, so `replay REPORT` reruns it exactly.
"""
import argparse
import json
import logging
import sys
import numpy as np

from dataclasses import asdict, dataclass, field, fields

from src import bernoulli_shift as shift
from src import frac_poisson as fp
from src import markov_core as mc
from src import sequence_models as sm
from src import simulate as sim
from src.documents import (VERSION, load_array, load_chain, load_coefficients, load_fourier,
                           load_json, load_observable, parse_generator, to_jsonable,
                           write_report)
from src.errors import ConfigError, InvalidGrid, MartingaleError
from src.util import FAILS, HOLDS, dyadic_grid

logger = logging.getLogger(__name__)

COMMANDS = ('chain-diagnose', 'linear', 'superlinear', 'frac-poisson', 'simulate',
            'paper-examples')
EXAMPLES = ('1', '4', '5', '6', 'ar1')
DEFAULT_PATHS = 100000
EXAMPLE5_J_MAX = 10000
EXAMPLE6_N_MAX = 1000000
EXAMPLE6_GRID = (4, 10)
EXAMPLE6_I_MAX = 1000000
CCLT_N = 2000
CCLT_LIMIT = 0.08


@dataclass(frozen=True)
class RunConfig:
    command: str
    chain: str = None
    g: str = None
    h: str = None
    coeffs: str = None
    generator: str = None
    fourier: str = None
    center: bool = False
    n_max: int = None
    grid: list = None
    m_grid: list = None
    paths: int = DEFAULT_PATHS
    seed: int = None
    tol: float = fp.DEFAULT_TOL
    tol_cauchy: float = sm.TOL_CAUCHY
    k_max: int = fp.K_MAX
    K: int = sm.EXAMPLE5_K
    j_max: int = 1000
    distance: str = sim.KOLMOGOROV
    noise: str = 'gaussian'
    kappa_sq: float = None
    warmup: int = None
    n: int = CCLT_N
    batch_size: int = sim.BATCH_SIZE
    workers: int = 1
    which: list = field(default_factory=list)
    out: str = None
    progress: bool = True

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}", field='command')
        checks = [('paths', self.paths >= 1), ('tol', self.tol > 0),
                  ('tol_cauchy', self.tol_cauchy > 0), ('k_max', self.k_max >= 1),
                  ('K', self.K >= 1), ('j_max', self.j_max >= 0), ('n', self.n >= 1),
                  ('batch_size', self.batch_size >= 1), ('workers', self.workers >= 1),
                  ('n_max', self.n_max is None or self.n_max >= 16),
                  ('warmup', self.warmup is None or self.warmup >= 1),
                  ('kappa_sq', self.kappa_sq is None or self.kappa_sq >= 0),
                  ('distance', self.distance in (sim.KOLMOGOROV, sim.LEVY))]
        for name, ok in checks:
            if not ok:
                raise ConfigError(f"{name}={getattr(self, name)!r} is out of range", field=name)
        bad = [w for w in self.which if w not in EXAMPLES]
        if bad:
            raise ConfigError(f"unknown examples {bad}; choose from {EXAMPLES}", field='which')

    def as_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}", field='config')
        return cls(**doc)


def parse_grid(text):
    """dyadic:A:B -> [2^A, ..., 2^B]."""
    if text is None:
        return None
    parts = text.split(':')
    if len(parts) != 3 or parts[0] != 'dyadic':
        raise InvalidGrid(f"grid {text!r} must look like dyadic:A:B", field='grid')
    try:
        return dyadic_grid(int(parts[1]), int(parts[2]))
    except ValueError:
        raise InvalidGrid(f"grid {text!r} has non-integer exponents", field='grid')


def _report(config, **body):
    return {'version': VERSION, 'command': config.command, **body,
            'config': config.as_dict()}


def _overall(*verdicts):
    if all(v == HOLDS for v in verdicts):
        return sm.YES
    if any(v == FAILS for v in verdicts):
        return sm.NO
    return sm.INCONCLUSIVE


def _need(config, *names):
    missing = [n for n in names if getattr(config, n) is None]
    if missing:
        raise ConfigError(f"{config.command} needs --{missing[0].replace('_', '-')}",
                          field=missing[0])


def _source(config):
    if config.generator:
        return parse_generator(config.generator)
    if config.coeffs:
        return load_coefficients(config.coeffs)
    raise ConfigError(f"{config.command} needs --coeffs or --generator", field='coeffs')


def _array(config):
    if config.fourier:
        return shift.to_coeff_array(load_fourier(config.fourier))
    if config.generator == 'example6':
        return sm.example6_array()
    if config.generator:
        return sm.CoeffArray({0: parse_generator(config.generator)})
    if config.coeffs:
        return load_array(config.coeffs)
    raise ConfigError(f"{config.command} needs --coeffs or --generator", field='coeffs')


def _trace_points(n_max):
    return [n for n in dyadic_grid(0, int(np.log2(n_max)))] + [n_max]


def cmd_chain_diagnose(config):
    _need(config, 'chain', 'g')
    chain = load_chain(config.chain)
    g = load_observable(config.g, chain, config.center)
    n_grid = config.grid or mc.N_GRID
    cond2, cond16 = mc.criteria_diagnostic(chain, g, n_grid, config.m_grid or mc.M_GRID)
    plus, solution = mc.plus_norm_sq(chain, g)
    H, kappa_sq = mc.martingale_kernel(chain, g)

    residuals = []
    for n in n_grid:
        value = mc.residual_second_moment(chain, g, n, n)
        residuals.append({'n': n, 'residual': value, 'residual_over_n': value / n,
                          'bound': mc.residual_bound(chain, g, n),
                          'limit_residual': mc.limit_residual_second_moment(chain, g, n)})

    return _report(config, verdict=_overall(cond2.verdict, cond16.verdict),
                   kappa_sq=kappa_sq, plus_norm_sq=plus,
                   poisson={'u': solution.u.values, 'residual': solution.residual},
                   kernel=H.values, criteria={'cond2': cond2, 'cond16': cond16},
                   residuals=residuals, classification=mc.classify(chain))


def cmd_linear(config):
    source = _source(config)
    n_max = config.n_max or sm.DEFAULT_N_MAX
    seq = sm.partial_sums(source, n_max)
    verdict = sm.corollary2_verdict(seq, tol_cauchy=config.tol_cauchy, n_grid=config.grid)
    points = _trace_points(n_max)
    return _report(config, source=source, verdict=verdict, growth=seq.growth(),
                   trace={'n': points, 'b': [seq.b[n] for n in points],
                          'bbar': [seq.bbar[n] for n in points]})


def cmd_superlinear(config):
    arr = _array(config)
    n_max = config.n_max or sm.DEFAULT_N_MAX
    bars = sm.superlinear_bars(arr, n_max, config.workers)
    verdict = sm.theorem1_verdict(bars, tol_cauchy=config.tol_cauchy, n_grid=config.grid)
    points = _trace_points(n_max)
    if config.generator == 'example6':
        streamed = sm.stream_example6(n_max, points, progress=config.progress)
        trace = {key: streamed[key] for key in ('n', 'bbar_norm_sq', 'gap', 'bbar_0_range')}
    else:
        b, bbar = bars.b, bars.bbar
        trace = {'n': points,
                 'bbar_norm_sq': [float(np.sum(np.abs(bbar[n]) ** 2)) for n in points],
                 'gap': [float(np.sqrt(np.sum(np.abs(bbar[n] - b[n]) ** 2))) for n in points]}
    return _report(config, columns={j: arr.columns[j] for j in arr.keys}, verdict=verdict,
                   trace=trace)


def cmd_frac_poisson(config):
    if config.chain:
        _need(config, 'h')
        chain = load_chain(config.chain)
        h = load_observable(config.h, chain, config.center)
        g, K_used, err = fp.sqrt_apply_chain(chain, h, config.tol, config.k_max)
        _, from_roots = fp.root_plus_norm(chain, h, config.tol, config.k_max)
        plus, _ = mc.plus_norm_sq(chain, g)
        return _report(config, mode='chain', g=g.values, K_used=K_used, err_bound=err,
                       verify_square=fp.verify_square(chain, h, config.tol, config.k_max),
                       plus_norm_sq=plus, root_plus_norm=from_roots)

    source = _source(config)
    if isinstance(source, sm.Example5):
        _, seq_c, bound = sm.example5_build(config.j_max, config.K)
        return _report(config, mode='sequence', c=seq_c.a, bound_report=bound)
    root = fp.sqrt_apply_sequence(source, config.j_max, config.K)
    return _report(config, mode='sequence', c=root.c, truncation=root)


def _kappa_for(arr, config):
    if config.kappa_sq is not None:
        return config.kappa_sq, []
    n_max = config.n_max or sm.DEFAULT_N_MAX
    verdict = sm.theorem1_verdict(arr, n_max, config.tol_cauchy)
    if verdict.exists == sm.YES:
        return verdict.kappa_sq, []
    bars = sm.superlinear_bars(arr, n_max)
    return float(bars.bbar_norm_sq()[n_max]), ['kappa_sq_from_bbar']


def cmd_simulate(config):
    _need(config, 'seed')
    common = dict(paths=config.paths, seed=config.seed, batch_size=config.batch_size,
                  workers=config.workers, progress=config.progress)
    if config.chain:
        _need(config, 'g')
        chain = load_chain(config.chain)
        g = load_observable(config.g, chain, config.center)
        _, kappa_sq = mc.martingale_kernel(chain, g)
        samples = sim.simulate_chain(chain, g, config.n, **common)
        report = sim.cclt_check(samples, kappa_sq, config.distance)
        exact = mc.sn_second_moment(chain, g, config.n) / config.n
        return _report(config, cclt=report, sn_second_moment_over_n=exact)

    arr = _array(config)
    kappa_sq, flags = _kappa_for(arr, config)
    common['batch_size'] = min(config.batch_size, sim.SUPERLINEAR_BATCH)
    samples = sim.simulate_superlinear(arr, sim.NoiseSpec.parse(config.noise), config.n,
                                       warmup=config.warmup, **common)
    report = sim.cclt_check(samples, kappa_sq, config.distance)
    return _report(config, cclt=report, flags=flags, warmup=samples.warmup,
                   truncation_error=samples.truncation_error, step_tail=samples.step_tail)


def _claim(name, value, passed):
    return {'claim': name, 'value': value, 'pass': bool(passed)}


def _example1(config):
    rng = np.random.default_rng(config.seed or 0)
    exact = True
    for _ in range(1000):
        keys = rng.choice(np.arange(-512, 513), size=8, replace=False)
        g = shift.FourierObservable({int(r): complex(*rng.standard_normal(2))
                                     for r in keys if r != 0})
        exact &= shift.apply_q_fourier(shift.apply_qstar_fourier(g)) == g

    g = shift.FourierObservable({int(r): complex(*rng.standard_normal(2))
                                 for r in range(-256, 257) if r != 0})
    pointwise = shift.apply_q_pointwise(shift.sample_trig(g, 1 << 12))
    fourier = shift.sample_trig(shift.apply_q_fourier(g), 1 << 11)
    deviation = float(np.max(np.abs(pointwise - fourier)))

    column = shift.FourierObservable({3 << i: 2.0 ** -i for i in range(60)})
    geometric = shift.ma_verdict_bernoulli(column)
    coboundary = shift.ma_verdict_bernoulli(shift.FourierObservable({3: 1.0, 6: -1.0}))
    return [_claim('QQ* = I on 1000 random observables', exact, exact),
            _claim('Fourier and pointwise Q agree', deviation, deviation <= 1e-10),
            _claim('geometric column: MA yes, kappa_sq = 4',
                   [geometric.exists, geometric.kappa_sq],
                   geometric.exists == sm.YES and abs(geometric.kappa_sq - 4) <= 1e-9),
            _claim('coboundary column: MA yes, kappa_sq = 0',
                   [coboundary.exists, coboundary.kappa_sq],
                   coboundary.exists == sm.YES and coboundary.kappa_sq == 0)]


def _example4(config):
    n = 4096
    claims = []
    for name, arr in (('geometric 0.5', sm.CoeffArray({0: sm.Geometric(0.5)})),
                      ('geometric 0.5 and -0.5', sm.CoeffArray({0: sm.Geometric(0.5),
                                                                 1: sm.Geometric(-0.5)}))):
        moment = sm.sn_second_moment_coeffs(arr, n) / n
        bars = sm.superlinear_bars(arr, n)
        norm_sq = float(bars.bbar_norm_sq()[n])
        claims.append(_claim(f"{name}: E[S_n^2]/n close to ||bbar_n||^2", [moment, norm_sq],
                             abs(moment - norm_sq) <= 1e-2 * norm_sq))
    return claims


def _example5(config):
    _, seq_c, bound = sm.example5_build(EXAMPLE5_J_MAX, config.K)
    verdict = sm.corollary2_verdict(seq_c, tol_cauchy=config.tol_cauchy)
    b = seq_c.b
    return [_claim('condition10 holds', verdict.condition.verdict,
                   verdict.condition.verdict == HOLDS),
            _claim('bbar divergent', verdict.cauchy['diameter'],
                   verdict.cauchy['verdict'] == FAILS),
            _claim('MA no', verdict.exists, verdict.exists == sm.NO),
            _claim('c_j >= a_j / (9 sqrt j) from j0', bound['j0'],
                   bound['envelope_holds_from_j0']),
            _claim('b_n strictly increasing', bound['b_strictly_increasing_from'],
                   bound['b_strictly_increasing_from'] <= 1),
            _claim('b grows between n=100 and n=10^4', [b[100], b[EXAMPLE5_J_MAX]],
                   b[EXAMPLE5_J_MAX] > b[100])]


def _example6(config):
    n_max = config.n_max or EXAMPLE6_N_MAX
    arr, traces = sm.example6_build(n_max, progress=config.progress)
    condition = sm.condition13_diagnostic(arr, dyadic_grid(*EXAMPLE6_GRID),
                                          i_max=max(n_max, EXAMPLE6_I_MAX), strict=True)
    verdict = sm.theorem1_verdict(arr, n_max, config.tol_cauchy, dyadic_grid(*EXAMPLE6_GRID))
    norm_sq = traces['bbar_norm_sq'][-1]
    samples = sim.simulate_superlinear(arr, sim.NoiseSpec(), CCLT_N, config.paths,
                                       config.seed or 0, progress=config.progress)
    cclt = sim.cclt_check(samples, 1.0, config.distance)
    return [_claim('condition13 holds', condition.slope, condition.verdict == HOLDS),
            _claim('||bbar_n||^2 -> 1', norm_sq, abs(norm_sq - 1) <= 0.05),
            _claim('bbar_n - b_n shrinks', traces['gap'][-1],
                   traces['gap'][-1] < traces['gap'][len(traces['gap']) // 2]),
            _claim('bbar not Cauchy', verdict.cauchy['diameter'],
                   verdict.cauchy['verdict'] == FAILS),
            _claim('bbar_0 oscillates', traces['bbar_0_range'], traces['bbar_0_range'] > 0.5),
            _claim('MA no', verdict.exists, verdict.exists == sm.NO),
            _claim('CCLT (unconditional)', cclt.distance, cclt.distance <= CCLT_LIMIT)]


def _example_ar1(config):
    verdict = sm.corollary2_verdict(sm.Geometric(0.5), tol_cauchy=config.tol_cauchy)
    # xi_1^2 = 1 under Rademacher noise, so the estimate is exact up to rounding
    kernel = sim.linear_kernel_distance(sm.Geometric(0.5), 4, 64, config.paths,
                                        config.seed or 0, sim.NoiseSpec('rademacher'),
                                        progress=config.progress)
    return [_claim('MA yes', verdict.exists, verdict.exists == sm.YES),
            _claim('kappa_sq = 4', verdict.kappa_sq,
                   verdict.kappa_sq is not None and abs(verdict.kappa_sq - 4) <= 1e-9),
            _claim('||Hbar_4 - Hbar_64|| = |bbar_4 - bbar_64|',
                   [kernel['distance'], kernel['exact']],
                   abs(kernel['distance'] - kernel['exact']) <= 1e-9)]


EXAMPLE_RUNNERS = {'1': _example1, '4': _example4, '5': _example5, '6': _example6,
                   'ar1': _example_ar1}


def cmd_paper_examples(config):
    bundle = {}
    for which in config.which or EXAMPLES:
        logger.info("reproducing example %s", which)
        claims = EXAMPLE_RUNNERS[which](config)
        bundle[which] = {'claims': claims, 'pass': all(c['pass'] for c in claims)}
    return _report(config, examples=bundle, all_pass=all(b['pass'] for b in bundle.values()))


DISPATCH = {
    'chain-diagnose': cmd_chain_diagnose,
    'linear': cmd_linear,
    'superlinear': cmd_superlinear,
    'frac-poisson': cmd_frac_poisson,
    'simulate': cmd_simulate,
    'paper-examples': cmd_paper_examples,
}


def run(config):
    return DISPATCH[config.command](config)


def build_parser():
    parser = argparse.ArgumentParser(
        prog='martingale_approx',
        description='Decide and diagnose martingale approximations of additive functionals.')
    parser.add_argument('--verbose', action='store_true', help='debug logging')
    parser.add_argument('--quiet', action='store_true', help='no progress bars, warnings only')
    sub = parser.add_subparsers(dest='command', required=True)

    def common(p):
        p.add_argument('--out', help='write the report here instead of stdout')
        p.add_argument('--grid', help='dyadic:A:B')
        p.add_argument('--n-max', type=int)
        p.add_argument('--tol-cauchy', type=float, default=sm.TOL_CAUCHY)
        p.add_argument('--workers', type=int, default=1)

    def coefficients(p):
        p.add_argument('--coeffs', help='coefficient file (JSON or one a_i per line)')
        p.add_argument('--generator', help='NAME[:params], e.g. geometric:0.5')

    def chain_inputs(p, obs='--g'):
        p.add_argument('--chain', help='chain document')
        p.add_argument(obs, help='observable document')
        p.add_argument('--center', action='store_true', help='subtract the pi-mean')

    p = sub.add_parser('chain-diagnose', help='criteria, plus norm and kernel of a chain')
    common(p)
    chain_inputs(p)
    p.add_argument('--m-grid', help='dyadic:A:B')

    p = sub.add_parser('linear', help='Cesaro criterion for a causal linear process')
    common(p)
    coefficients(p)

    p = sub.add_parser('superlinear', help='l2(J) criterion for a superlinear process')
    common(p)
    coefficients(p)
    p.add_argument('--fourier', help='Fourier coefficients of a Bernoulli-shift observable')

    p = sub.add_parser('frac-poisson', help='apply the square root of I - Q')
    common(p)
    chain_inputs(p, '--h')
    coefficients(p)
    p.add_argument('--tol', type=float, default=fp.DEFAULT_TOL)
    p.add_argument('--k-max', type=int, default=fp.K_MAX)
    p.add_argument('--K', type=int, default=sm.EXAMPLE5_K)
    p.add_argument('--j-max', type=int, default=1000)

    p = sub.add_parser('simulate', help='Monte Carlo CCLT check')
    common(p)
    chain_inputs(p)
    coefficients(p)
    p.add_argument('--seed', type=int, required=True)
    p.add_argument('--paths', type=int, default=DEFAULT_PATHS)
    p.add_argument('--n', type=int, default=CCLT_N)
    p.add_argument('--distance', choices=(sim.KOLMOGOROV, sim.LEVY), default=sim.KOLMOGOROV)
    p.add_argument('--noise', default='gaussian', help='gaussian, rademacher, '
                   'centered_uniform or two_point:P')
    p.add_argument('--kappa-sq', type=float)
    p.add_argument('--warmup', type=int)
    p.add_argument('--batch-size', type=int, default=sim.BATCH_SIZE)

    p = sub.add_parser('paper-examples', help='reproduce the worked examples')
    common(p)
    p.add_argument('which', nargs='*', help=f"subset of {', '.join(EXAMPLES)} (default all)")
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--paths', type=int, default=10000)
    p.add_argument('--K', type=int, default=sm.EXAMPLE5_K)
    p.add_argument('--distance', choices=(sim.KOLMOGOROV, sim.LEVY), default=sim.KOLMOGOROV)

    p = sub.add_parser('replay', help="rerun the config embedded in a report")
    p.add_argument('report')
    p.add_argument('--out')
    return parser


def config_from_args(args):
    if args.command == 'replay':
        doc = load_json(args.report)
        if 'config' not in doc:
            raise ConfigError(f"{args.report} has no embedded config", field='config')
        config = dict(doc['config'])
        config['out'] = args.out
        return RunConfig.from_dict(config)

    values = {k: v for k, v in vars(args).items()
              if k in {f.name for f in fields(RunConfig)}}
    values['grid'] = parse_grid(values.get('grid'))
    values['m_grid'] = parse_grid(values.get('m_grid'))
    values['progress'] = not args.quiet
    values['which'] = list(values.get('which') or [])
    return RunConfig(**values)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else (logging.WARNING if args.quiet else logging.INFO)
    logging.basicConfig(level=level, stream=sys.stderr,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')

    try:
        config = config_from_args(args)
        report = run(config)
        write_report(report, config.out)
    except MartingaleError as exc:
        logger.debug("command failed", exc_info=True)
        print(json.dumps(to_jsonable(exc.as_dict())), file=sys.stderr)
        return 1
    return 0
