import unittest
import numpy as np

from src.errors import (ConfigError, HorizonExceeded, InvalidGrid, RaggedColumns,
                        TailNotCertified)
from src.sequence_models import (MAX_HORIZON, NO, YES, Coboundary, CoeffArray, Example5,
                                 Example6, Geometric, Power, condition10_diagnostic,
                                 condition13_diagnostic, corollary2_verdict, default_grid,
                                 example5_build, example6_array, example6_build,
                                 make_generator, partial_sums, sn_second_moment_coeffs,
                                 stream_example6, superlinear_bars, theorem1_verdict,
                                 vn_norm_sq_linear)
from src.util import FAILS, HOLDS, dyadic_grid


class TestGenerators(unittest.TestCase):
    def test_make_generator(self):
        source = make_generator('geometric', (0.5,))
        np.testing.assert_allclose(source.take(4), [1.0, 0.5, 0.25, 0.125])
        self.assertEqual(source.b_limit, 2.0)
        self.assertEqual(make_generator('example6_sin').name, 'example6_sin')

    def test_unknown_generator(self):
        with self.assertRaises(ConfigError):
            make_generator('arma')

    def test_bad_params(self):
        with self.assertRaises(ConfigError):
            make_generator('geometric')
        with self.assertRaises(ConfigError):
            Geometric(1.0)
        with self.assertRaises(ConfigError):
            Example6('tan')

    def test_example6_partial_sums(self):
        col = Example6('cos')
        np.testing.assert_array_equal(col.partial([0, 1]), [0.0, 0.0])
        self.assertAlmostEqual(float(col.partial([2])[0]), np.cos(np.sqrt(np.log(2))))
        b = np.cumsum(col.take(100))
        np.testing.assert_allclose(b, col.partial(np.arange(100)), atol=1e-13)


class TestPartialSums(unittest.TestCase):
    def test_geometric(self):
        seq = partial_sums(Geometric(0.5), 4)
        np.testing.assert_allclose(seq.b[:3], [1.0, 1.5, 1.75])
        self.assertEqual(seq.bbar[1], 1.0)
        self.assertEqual(seq.bbar[2], 1.25)
        self.assertEqual(seq.n_max, 4)
        self.assertLess(seq.growth(), 1.1)

    def test_coboundary_averages(self):
        seq = partial_sums(Coboundary(), 32)
        n = np.arange(1, 33)
        np.testing.assert_allclose(seq.bbar[1:], 1.0 / n)
        np.testing.assert_array_equal(seq.b[1:], 0.0)

    def test_zeros(self):
        seq = partial_sums(np.zeros(5), 10)
        np.testing.assert_array_equal(seq.bbar, 0.0)

    def test_read_only(self):
        seq = partial_sums(Geometric(0.5), 4)
        with self.assertRaises(ValueError):
            seq.b[0] = 2.0

    def test_horizon_exceeded(self):
        with self.assertRaises(HorizonExceeded):
            partial_sums(Geometric(0.5), MAX_HORIZON)


class TestVnNorm(unittest.TestCase):
    def test_coboundary(self):
        seq = partial_sums(Coboundary(), 16)
        self.assertEqual(vn_norm_sq_linear(seq, 1), (2.0, 0.0))
        self.assertEqual(vn_norm_sq_linear(seq, 2), (1.0, 0.0))

    def test_single_step_is_l2_norm(self):
        seq = partial_sums(Geometric(0.5), 64)
        value, tail = vn_norm_sq_linear(seq, 1)
        self.assertAlmostEqual(value, 4 / 3, places=12)
        self.assertLess(tail, 1e-30)

    def test_horizon(self):
        seq = partial_sums(Geometric(0.5), 16)
        with self.assertRaises(HorizonExceeded):
            vn_norm_sq_linear(seq, 8, i_max=10)

    def test_uncertified_tail(self):
        seq = partial_sums(Power(0.75), 64)
        with self.assertRaises(TailNotCertified):
            vn_norm_sq_linear(seq, 2)
        _, tail = vn_norm_sq_linear(seq, 2, strict=False)
        self.assertEqual(tail, float('inf'))


class TestCondition10(unittest.TestCase):
    def test_default_grid(self):
        self.assertEqual(default_grid(4096), dyadic_grid(1, 10))
        self.assertEqual(default_grid(64), dyadic_grid(1, 4))
        with self.assertRaises(InvalidGrid):
            default_grid(8)

    def test_geometric_holds(self):
        verdict = condition10_diagnostic(partial_sums(Geometric(0.5), 1 << 12))
        self.assertEqual(verdict.verdict, HOLDS)
        self.assertLess(verdict.slope, -0.8)

    def test_power_fails(self):
        verdict = condition10_diagnostic(partial_sums(Power(0.75), 1 << 12))
        self.assertEqual(verdict.verdict, FAILS)
        self.assertIn('not certified', verdict.notes[0])

    def test_example5_root_holds(self):
        _, seq_c, _ = example5_build(1 << 14)
        self.assertEqual(condition10_diagnostic(seq_c).verdict, HOLDS)


class TestCorollary2(unittest.TestCase):
    def test_geometric(self):
        verdict = corollary2_verdict(Geometric(0.5))
        self.assertEqual(verdict.exists, YES)
        self.assertAlmostEqual(verdict.kappa_sq, 4.0, delta=1e-9)
        self.assertEqual(verdict.cauchy['verdict'], HOLDS)

    def test_coboundary(self):
        verdict = corollary2_verdict(Coboundary())
        self.assertEqual(verdict.exists, YES)
        self.assertEqual(verdict.kappa_sq, 0.0)

    def test_example5_has_no_approximation(self):
        verdict = corollary2_verdict(Example5())
        self.assertEqual(verdict.exists, NO)
        self.assertEqual(verdict.cauchy['verdict'], FAILS)
        self.assertIsNone(verdict.kappa_sq)

    def test_squared_means_control_means(self):
        rng = np.random.default_rng(70)
        n_max = 4096
        n = np.arange(1, n_max)
        for _ in range(50):
            p = rng.uniform(0.55, 1.5)
            a = rng.standard_normal(n_max + 1) * (np.arange(n_max + 1) + 1.0) ** -p
            seq = partial_sums(a, n_max)
            b, bbar = seq.b, seq.bbar
            # bbar_{n+1} - bbar_n = (b_n - bbar_n) / (n + 1)
            np.testing.assert_allclose(np.diff(bbar[1:]), (b[1:-1] - bbar[1:-1]) / (n + 1),
                                       atol=1e-12)
            window = bbar[n_max // 2:]
            step = float(np.max(np.abs(np.diff(window))))
            sq_diameter = float(np.ptp(window ** 2))
            self.assertLessEqual(float(np.ptp(window)),
                                 2 * np.sqrt(sq_diameter) + 2 * step + 1e-12)

    def test_as_dict(self):
        report = corollary2_verdict(Geometric(0.5), n_max=4096).as_dict()
        self.assertEqual(report['exists'], YES)
        self.assertEqual(report['condition']['verdict'], HOLDS)
        self.assertEqual(report['cauchy']['window'], [2048, 4096])


class TestSuperlinear(unittest.TestCase):
    def test_coboundary_columns(self):
        bars = superlinear_bars(CoeffArray({0: Coboundary(), 1: Coboundary()}), 16)
        n = np.arange(1, 17)
        np.testing.assert_allclose(bars.bbar_norm_sq()[1:], 2.0 / n ** 2)
        b, bbar = bars.at(3)
        self.assertEqual(b.norm_sq, 0.0)
        self.assertAlmostEqual(bbar.norm_sq, 2 / 9)

    def test_workers_agree(self):
        arr = example6_array()
        serial = superlinear_bars(arr, 1024)
        threaded = superlinear_bars(arr, 1024, workers=2)
        np.testing.assert_array_equal(serial.bbar, threaded.bbar)

    def test_ragged_columns(self):
        with self.assertRaises(RaggedColumns):
            CoeffArray({0: [1.0, 2.0], 1: [1.0, 2.0, 3.0]})

    def test_condition13_zero(self):
        verdict = condition13_diagnostic(CoeffArray({0: np.zeros(4)}), i_max=64)
        self.assertEqual(verdict.verdict, HOLDS)
        self.assertEqual(verdict.slope, float('-inf'))

    def test_condition13_example6(self):
        verdict = condition13_diagnostic(example6_array(), dyadic_grid(4, 10), i_max=1 << 17)
        self.assertEqual(verdict.verdict, HOLDS)

    def test_condition13_uncertified(self):
        arr = CoeffArray({0: Power(0.75)})
        with self.assertRaises(TailNotCertified):
            condition13_diagnostic(arr, i_max=256)
        self.assertEqual(condition13_diagnostic(arr, i_max=256, strict=False).verdict, FAILS)

    def test_condition13_needs_i_max(self):
        with self.assertRaises(ValueError):
            condition13_diagnostic(example6_array())

    def test_theorem1_example6(self):
        verdict = theorem1_verdict(example6_array(), n_max=1 << 16)
        self.assertEqual(verdict.exists, NO)
        self.assertEqual(verdict.cauchy['verdict'], FAILS)

    def test_single_column_matches_linear(self):
        linear = corollary2_verdict(Geometric(0.5), n_max=4096)
        superlinear = theorem1_verdict(CoeffArray({0: Geometric(0.5)}), n_max=4096)
        self.assertEqual(superlinear.exists, linear.exists)
        self.assertEqual(superlinear.kappa_sq, linear.kappa_sq)
        self.assertAlmostEqual(superlinear.condition.slope, linear.condition.slope,
                               places=12)

    def test_theorem1_zero(self):
        verdict = theorem1_verdict(CoeffArray({0: np.zeros(8)}), n_max=1024)
        self.assertEqual(verdict.exists, YES)
        self.assertEqual(verdict.kappa_sq, 0.0)


class TestSecondMoment(unittest.TestCase):
    def test_coboundary(self):
        arr = CoeffArray({0: Coboundary()})
        self.assertAlmostEqual(sn_second_moment_coeffs(arr, 10), 2.0, places=9)

    def test_geometric(self):
        arr = CoeffArray({0: Geometric(0.5)})
        self.assertAlmostEqual(sn_second_moment_coeffs(arr, 64), 4 * 64 - 16 / 3, places=6)

    def test_columns_add(self):
        one = sn_second_moment_coeffs(CoeffArray({0: Geometric(0.5)}), 32)
        two = sn_second_moment_coeffs(CoeffArray({0: Geometric(0.5), 1: Coboundary()}), 32)
        self.assertAlmostEqual(two - one, 2.0, places=8)


class TestExample5(unittest.TestCase):
    def test_report(self):
        seq_a, seq_c, report = example5_build(1000, 10000)
        self.assertAlmostEqual(report['a_0'], 1 / np.log(2), places=12)
        self.assertEqual(report['K'], 10000)
        for key in ('j0', 'envelope_holds_from_j0', 'b_strictly_increasing_from',
                    'b_checkpoint', 'b_j_max', 'envelope_sum', 'truncation'):
            self.assertIn(key, report)
        self.assertEqual(seq_c.source.name, 'example5_root')
        self.assertGreater(report['b_j_max'], report['b_checkpoint'])
        # sqrt(I - S) loses mass, so c sums to less than a
        self.assertLess(seq_c.b[-1], seq_a.b[-1])

    def test_acceptance_scale(self):
        j_max = 10000
        _, seq_c, report = example5_build(j_max, 100000)
        self.assertTrue(report['envelope_holds_from_j0'])
        self.assertIsNotNone(report['j0'])
        n0 = report['b_strictly_increasing_from']
        self.assertLessEqual(n0, 1)
        self.assertTrue(np.all(np.diff(seq_c.b[n0:]) > 0))
        self.assertGreater(seq_c.b[j_max], seq_c.b[100])


class TestExample6(unittest.TestCase):
    def test_traces(self):
        traces = stream_example6(1 << 16)
        self.assertLessEqual(abs(traces['bbar_norm_sq'][-1] - 1), 0.05)
        late = [g for n, g in zip(traces['n'], traces['gap']) if n >= 256]
        self.assertLess(late[-1], late[0])
        self.assertGreater(traces['bbar_0_range'], 0.5)
        self.assertEqual(traces['n'][0], 4)
        self.assertEqual(traces['n'][-1], 1 << 16)

    def test_bad_horizon(self):
        with self.assertRaises(ValueError):
            stream_example6(2)

    def test_build(self):
        arr, traces = example6_build(1024, checkpoints=[16, 1024])
        self.assertEqual(arr.keys, [0, 1])
        self.assertEqual(traces['n'], [16, 1024])
        c = arr.columns[0].take(1024)
        self.assertEqual(c[0], 0.0)
        self.assertEqual(c[1], 0.0)
        n = np.arange(3, 1024)
        self.assertTrue(np.all(np.abs(c[3:]) <= 1 / (2 * (n - 1) * np.sqrt(np.log(n - 1)))))

    def test_stream_matches_materialized(self):
        n_max = 4096
        points = [1, 100, 1000, n_max]
        bars = superlinear_bars(example6_array(), n_max)
        streamed = stream_example6(n_max, checkpoints=points, chunk=1000)
        self.assertEqual(streamed['n'], points)
        b, bbar = bars.b, bars.bbar
        for p, gap, norm_sq in zip(points, streamed['gap'], streamed['bbar_norm_sq']):
            np.testing.assert_allclose(streamed['bbar'][p], bbar[p], atol=1e-12)
            self.assertAlmostEqual(gap, float(np.linalg.norm(bbar[p] - b[p])), places=10)
            self.assertAlmostEqual(norm_sq, float(np.sum(bbar[p] ** 2)), places=10)
        self.assertAlmostEqual(streamed['bbar_0_range'], float(np.ptp(bbar[1:, 0])),
                               places=10)


if __name__ == '__main__':
    unittest.main()
