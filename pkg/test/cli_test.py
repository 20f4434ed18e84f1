import contextlib
import io
import json
import os
import tempfile
import unittest

from src.cli import RunConfig, main, parse_grid
from src.errors import ConfigError, InvalidGrid


class CliTestCase(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def path(self, name):
        return os.path.join(self.tmp.name, name)

    def write(self, name, doc):
        with open(self.path(name), 'w', encoding='utf-8') as handle:
            if isinstance(doc, str):
                handle.write(doc)
            else:
                json.dump(doc, handle)
        return self.path(name)

    def run_cli(self, *argv, out='report.json'):
        """(exit code, report or None, stderr text)."""
        err = io.StringIO()
        with contextlib.redirect_stderr(err):
            code = main(['--quiet', *argv, '--out', self.path(out)])
        report = None
        if code == 0:
            with open(self.path(out), encoding='utf-8') as handle:
                report = json.load(handle)
        return code, report, err.getvalue()

    def error(self, stderr):
        return json.loads(stderr.strip().splitlines()[-1])

    def error_code(self, stderr):
        return self.error(stderr)['error']


class TestChainDiagnose(CliTestCase):
    def test_two_state(self):
        chain = self.write('chain.json', {'Q': [[0.75, 0.25], [0.25, 0.75]]})
        g = self.write('g.json', {'values': [1.0, -1.0]})
        code, report, _ = self.run_cli('chain-diagnose', '--chain', chain, '--g', g)
        self.assertEqual(code, 0)
        self.assertEqual(report['verdict'], 'yes')
        self.assertAlmostEqual(report['kappa_sq'], 3.0, places=10)
        self.assertAlmostEqual(report['plus_norm_sq'], 3.0, places=10)
        self.assertEqual(report['version'], '1.0.0')
        self.assertEqual(report['config']['command'], 'chain-diagnose')
        self.assertTrue(report['classification']['reversible'])

    def test_iid_kappa_is_variance(self):
        chain = self.write('chain.json', {'Q': [[0.5, 0.25, 0.25]] * 3})
        g = self.write('g.json', {'values': [1.0, -1.0, -1.0]})
        _, report, _ = self.run_cli('chain-diagnose', '--chain', chain, '--g', g)
        self.assertAlmostEqual(report['kappa_sq'], 1.0, places=10)

    def test_center(self):
        chain = self.write('chain.json', {'Q': [[0.9, 0.1], [0.3, 0.7]]})
        g = self.write('g.json', {'values': [1.0, -1.0]})
        code, _, stderr = self.run_cli('chain-diagnose', '--chain', chain, '--g', g)
        self.assertEqual(code, 1)
        self.assertEqual(self.error_code(stderr), 'not_mean_zero')
        code, _, _ = self.run_cli('chain-diagnose', '--chain', chain, '--g', g, '--center')
        self.assertEqual(code, 0)

    def test_malformed_row(self):
        chain = self.write('chain.json', {'Q': [[0.75, 0.25], [0.5, 0.4]]})
        g = self.write('g.json', {'values': [1.0, -1.0]})
        code, _, stderr = self.run_cli('chain-diagnose', '--chain', chain, '--g', g)
        self.assertEqual(code, 1)
        error = json.loads(stderr.strip().splitlines()[-1])
        self.assertEqual(error['error'], 'non_stochastic_row')
        self.assertEqual(error['field'], 'Q[1]')

    def test_missing_file(self):
        code, _, stderr = self.run_cli('chain-diagnose', '--chain', self.path('nope.json'),
                                       '--g', self.path('nope.json'))
        self.assertEqual(code, 1)
        self.assertEqual(self.error_code(stderr), 'bad_document')

    def test_non_numeric_observable(self):
        chain = self.write('chain.json', {'Q': [[0.75, 0.25], [0.25, 0.75]]})
        g = self.write('g.json', {'values': ['a', 1]})
        code, _, stderr = self.run_cli('chain-diagnose', '--chain', chain, '--g', g)
        self.assertEqual(code, 1)
        self.assertEqual(self.error(stderr)['error'], 'bad_document')
        self.assertEqual(self.error(stderr)['field'], 'values')

    def test_wrong_length_observable(self):
        chain = self.write('chain.json', {'Q': [[0.75, 0.25], [0.25, 0.75]]})
        g = self.write('g.json', {'values': [1.0, 2.0, 3.0]})
        code, _, stderr = self.run_cli('chain-diagnose', '--chain', chain, '--g', g,
                                       '--center')
        self.assertEqual(code, 1)
        self.assertEqual(self.error(stderr)['field'], 'values')

    def test_malformed_matrix(self):
        g = self.write('g.json', {'values': [1.0, -1.0]})
        for Q in (5, [], [[0.5, 'x'], [0.5, 0.5]]):
            chain = self.write('chain.json', {'Q': Q})
            code, _, stderr = self.run_cli('chain-diagnose', '--chain', chain, '--g', g)
            self.assertEqual(code, 1)
            error = self.error(stderr)
            self.assertEqual((error['error'], error['field']), ('bad_document', 'Q'))

    def test_non_numeric_pi(self):
        chain = self.write('chain.json', {'Q': [[0.75, 0.25], [0.25, 0.75]],
                                          'pi': ['half', 0.5]})
        g = self.write('g.json', {'values': [1.0, -1.0]})
        code, _, stderr = self.run_cli('chain-diagnose', '--chain', chain, '--g', g)
        self.assertEqual(code, 1)
        self.assertEqual(self.error(stderr)['field'], 'pi')


class TestLinear(CliTestCase):
    def test_geometric(self):
        code, report, _ = self.run_cli('linear', '--generator', 'geometric:0.5')
        self.assertEqual(code, 0)
        self.assertEqual(report['verdict']['exists'], 'yes')
        self.assertAlmostEqual(report['verdict']['kappa_sq'], 4.0, places=9)
        self.assertEqual(report['source'], {'generator': 'geometric', 'params': [0.5]})
        self.assertEqual(report['trace']['n'][-1], 65536)

    def test_example5(self):
        _, report, _ = self.run_cli('linear', '--generator', 'example5')
        self.assertEqual(report['verdict']['exists'], 'no')

    def test_text_coefficients(self):
        coeffs = self.write('coeffs.txt', '1.0\n-1.0\n')
        _, report, _ = self.run_cli('linear', '--coeffs', coeffs, '--n-max', '4096')
        self.assertEqual(report['verdict']['exists'], 'yes')
        self.assertEqual(report['verdict']['kappa_sq'], 0.0)

    def test_bad_grid(self):
        code, _, stderr = self.run_cli('linear', '--generator', 'geometric:0.5',
                                       '--grid', 'dyadic:3')
        self.assertEqual(code, 1)
        self.assertEqual(self.error_code(stderr), 'invalid_grid')

    def test_missing_coefficients(self):
        code, _, stderr = self.run_cli('linear')
        self.assertEqual(code, 1)
        self.assertEqual(self.error_code(stderr), 'bad_config')

    def test_unknown_generator(self):
        code, _, stderr = self.run_cli('linear', '--generator', 'arma:0.5')
        self.assertEqual(code, 1)
        self.assertEqual(self.error_code(stderr), 'bad_config')


class TestSuperlinear(CliTestCase):
    def test_single_column_matches_linear(self):
        doc = self.write('array.json',
                         {'columns': {'0': {'generator': 'geometric', 'params': [0.5]}}})
        _, superlinear, _ = self.run_cli('superlinear', '--coeffs', doc, '--n-max', '4096')
        _, linear, _ = self.run_cli('linear', '--generator', 'geometric:0.5',
                                    '--n-max', '4096', out='linear.json')
        self.assertEqual(superlinear['verdict']['exists'], linear['verdict']['exists'])
        self.assertEqual(superlinear['verdict']['kappa_sq'], linear['verdict']['kappa_sq'])

    def test_ragged(self):
        doc = self.write('array.json', {'columns': {'0': [1.0, 2.0], '1': [1.0, 2.0, 3.0]}})
        code, _, stderr = self.run_cli('superlinear', '--coeffs', doc)
        self.assertEqual(code, 1)
        self.assertEqual(self.error_code(stderr), 'ragged_columns')

    def test_malformed_columns(self):
        cases = [({'x': [1.0, -1.0]}, 'columns[x]'),
                 ({'0': ['a', 1.0]}, 'columns[0]'),
                 ({'0': [[1.0, 2.0, 3.0]]}, 'columns[0]'),
                 ({'0': 5}, 'columns[0]'),
                 ([[1.0, -1.0]], 'columns')]
        for columns, field in cases:
            doc = self.write('array.json', {'columns': columns})
            code, _, stderr = self.run_cli('superlinear', '--coeffs', doc)
            self.assertEqual(code, 1)
            error = self.error(stderr)
            self.assertEqual((error['error'], error['field']), ('bad_document', field))

    def test_example6_trace_is_streamed(self):
        _, report, _ = self.run_cli('superlinear', '--generator', 'example6', '--n-max', '4096')
        self.assertEqual(report['verdict']['exists'], 'no')
        trace = report['trace']
        self.assertEqual(trace['n'][-1], 4096)
        self.assertEqual(len(trace['n']), len(trace['gap']))
        self.assertGreater(trace['bbar_0_range'], 0.3)

    def test_fourier_coboundary(self):
        doc = self.write('fourier.json', {'coeffs': {'3': [1.0, 0.0], '6': [-1.0, 0.0]}})
        _, report, _ = self.run_cli('superlinear', '--fourier', doc, '--n-max', '4096')
        self.assertEqual(report['verdict']['exists'], 'yes')
        self.assertEqual(report['verdict']['kappa_sq'], 0.0)

    def test_zero_frequency(self):
        doc = self.write('fourier.json', {'coeffs': {'0': 1.0}})
        code, _, stderr = self.run_cli('superlinear', '--fourier', doc)
        self.assertEqual(code, 1)
        self.assertEqual(self.error_code(stderr), 'zero_index')


class TestFracPoisson(CliTestCase):
    def setUp(self):
        super().setUp()
        self.chain = self.write('chain.json', {'Q': [[0.75, 0.25], [0.25, 0.75]]})
        self.h = self.write('h.json', {'values': [1.0, -1.0]})

    def test_chain(self):
        code, report, _ = self.run_cli('frac-poisson', '--chain', self.chain, '--h', self.h)
        self.assertEqual(code, 0)
        self.assertAlmostEqual(report['g'][0], 0.5 ** 0.5, places=9)
        self.assertAlmostEqual(report['g'][1], -0.5 ** 0.5, places=9)
        self.assertLessEqual(report['verify_square'], 1e-9)
        # <(I+Q)h, h> = 1.5 for this reversible chain
        self.assertAlmostEqual(report['plus_norm_sq'], 1.5, places=8)
        self.assertAlmostEqual(report['root_plus_norm'], 1.5, places=8)

    def test_no_convergence(self):
        code, _, stderr = self.run_cli('frac-poisson', '--chain', self.chain, '--h', self.h,
                                       '--tol', '1e-12', '--k-max', '2')
        self.assertEqual(code, 1)
        error = json.loads(stderr.strip().splitlines()[-1])
        self.assertEqual(error['error'], 'no_convergence')
        self.assertTrue(error['contraction_trace'])

    def test_short_coefficient_file(self):
        coeffs = self.write('short.txt', '1.0\n0.5\n0.25\n')
        code, _, stderr = self.run_cli('frac-poisson', '--coeffs', coeffs,
                                       '--j-max', '10', '--K', '100')
        self.assertEqual(code, 1)
        self.assertEqual(self.error_code(stderr), 'insufficient_horizon')

    def test_complex_coefficients(self):
        a = [0.5 ** i for i in range(13)]
        real = self.write('real.json', {'values': a})
        rotated = self.write('rotated.json', {'values': [[0.0, x] for x in a]})
        _, first, _ = self.run_cli('frac-poisson', '--coeffs', real, '--j-max', '2',
                                   '--K', '10')
        _, second, _ = self.run_cli('frac-poisson', '--coeffs', rotated, '--j-max', '2',
                                    '--K', '10', out='rotated_report.json')
        self.assertEqual(len(second['c']), 3)
        for c, (re, im) in zip(first['c'], second['c']):
            self.assertAlmostEqual(re, 0.0, places=12)
            self.assertAlmostEqual(im, c, places=12)

    def test_sequence(self):
        _, report, _ = self.run_cli('frac-poisson', '--generator', 'geometric:0.5',
                                    '--j-max', '10', '--K', '1000')
        self.assertEqual(report['mode'], 'sequence')
        self.assertEqual(len(report['c']), 11)
        self.assertAlmostEqual(report['c'][0], 0.5 ** 0.5, delta=0.02)


class TestSimulate(CliTestCase):
    def test_seed_required(self):
        with contextlib.redirect_stderr(io.StringIO()):
            with self.assertRaises(SystemExit) as ctx:
                main(['simulate', '--generator', 'geometric:0.5'])
        self.assertEqual(ctx.exception.code, 2)

    def test_chain_is_reproducible(self):
        chain = self.write('chain.json', {'Q': [[0.75, 0.25], [0.25, 0.75]]})
        g = self.write('g.json', {'values': [1.0, -1.0]})
        args = ('simulate', '--chain', chain, '--g', g, '--n', '16', '--paths', '2000',
                '--seed', '11')
        _, first, _ = self.run_cli(*args)
        _, second, _ = self.run_cli(*args)
        self.assertEqual(first, second)
        self.assertAlmostEqual(first['cclt']['kappa_sq'], 3.0, places=10)
        self.assertAlmostEqual(first['sn_second_moment_over_n'], (3 * 16 - 4) / 16, places=4)


class TestWorkedExamples(CliTestCase):
    def test_ar1_and_bernoulli(self):
        code, report, _ = self.run_cli('paper-examples', 'ar1', '1')
        self.assertEqual(code, 0)
        self.assertEqual(sorted(report['examples']), ['1', 'ar1'])
        self.assertTrue(report['all_pass'])

    def test_divergent_examples(self):
        code, report, _ = self.run_cli('paper-examples', '5', '6', '--paths', '2000')
        self.assertEqual(code, 0)
        examples = report['examples']
        self.assertEqual(sorted(examples), ['5', '6'])
        for which in ('5', '6'):
            failed = [c['claim'] for c in examples[which]['claims'] if not c['pass']]
            self.assertEqual(failed, [], which)
        verdicts = {c['claim']: c['value'] for c in examples['6']['claims']}
        self.assertEqual(verdicts['MA no'], 'no')
        self.assertGreater(verdicts['bbar_0 oscillates'], 0.5)

    def test_unknown_example(self):
        code, _, stderr = self.run_cli('paper-examples', '7')
        self.assertEqual(code, 1)
        self.assertEqual(self.error_code(stderr), 'bad_config')


class TestReplay(CliTestCase):
    def test_replay_reproduces_report(self):
        _, first, _ = self.run_cli('linear', '--generator', 'geometric:0.5', '--n-max', '4096')
        code, second, _ = self.run_cli('replay', self.path('report.json'), out='replay.json')
        self.assertEqual(code, 0)
        first['config'].pop('out')
        second['config'].pop('out')
        self.assertEqual(first, second)

    def test_report_without_config(self):
        doc = self.write('bare.json', {'version': '1.0.0'})
        code, _, stderr = self.run_cli('replay', doc, out='replay.json')
        self.assertEqual(code, 1)
        self.assertEqual(self.error_code(stderr), 'bad_config')


class TestRunConfig(unittest.TestCase):
    def test_parse_grid(self):
        self.assertEqual(parse_grid('dyadic:1:3'), [2, 4, 8])
        self.assertIsNone(parse_grid(None))
        for text in ('dyadic:3', 'linear:1:3', 'dyadic:a:b', 'dyadic:4:2'):
            with self.assertRaises(InvalidGrid):
                parse_grid(text)

    def test_validation(self):
        with self.assertRaises(ConfigError):
            RunConfig('bogus')
        with self.assertRaises(ConfigError):
            RunConfig('simulate', paths=0)
        with self.assertRaises(ConfigError):
            RunConfig('linear', n_max=8)
        with self.assertRaises(ConfigError):
            RunConfig('paper-examples', which=['7'])

    def test_round_trip(self):
        config = RunConfig('linear', generator='geometric:0.5', grid=[2, 4, 8])
        self.assertEqual(RunConfig.from_dict(config.as_dict()), config)
        with self.assertRaises(ConfigError):
            RunConfig.from_dict({'command': 'linear', 'colour': 'red'})


if __name__ == '__main__':
    unittest.main()
