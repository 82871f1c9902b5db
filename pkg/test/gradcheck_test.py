import unittest

from dmrnet.errors import RejectedInputError
from dmrnet.gradcheck import GradientCheckReport, gradient_check, tiny_config


class TestGradientCheck(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.report = gradient_check(tiny_config(), tolerance=1e-4)

    def test_full_objective(self):
        self.assertTrue(self.report.passed, str(self.report))
        self.assertEqual(
            list(self.report.errors),
            ["encoder_0", "encoder_1", "fusion", "mu_head", "sigma_head", "classifier"]
        )
        self.assertLessEqual(self.report.num_parameters, 2000)

    def test_zero_initialized_sigma_head(self):
        report = gradient_check(tiny_config(zero_init_sigma_head=True), tolerance=1e-4)
        for group in ["encoder_0", "encoder_1", "fusion", "mu_head", "classifier"]:
            self.assertLess(report.errors[group], 1e-4, group)

    def test_vector_level(self):
        report = gradient_check(tiny_config(distribution_level="vector"), tolerance=1e-4)
        self.assertTrue(report.passed, str(report))

    def test_attention_level(self):
        report = gradient_check(tiny_config(distribution_level="attention"), tolerance=1e-4)
        self.assertTrue(report.passed, str(report))
        self.assertIn("attention_pool", report.errors)

    def test_corrupted_gradient_fails(self):
        report = gradient_check(tiny_config(), tolerance=1e-4, corrupt="fusion")
        self.assertFalse(report.passed)
        self.assertGreater(report.errors["fusion"], 0.5)
        self.assertLess(report.errors["classifier"], 1e-4)

    def test_rejected(self):
        with self.assertRaises(RejectedInputError):
            gradient_check(tiny_config(hidden_features=64, num_channels=16))
        with self.assertRaises(RejectedInputError):
            gradient_check(tiny_config(), corrupt="decoder")
        with self.assertRaises(RejectedInputError):
            gradient_check(tiny_config(), batch_size=1)

    def test_report(self):
        report = GradientCheckReport(errors={"a": 1e-6, "b": 1e-3}, tolerance=1e-4, num_parameters=10)
        self.assertFalse(report.passed)
        self.assertEqual(report.max_error, 1e-3)
        self.assertIn("FAILED", str(report))
        self.assertEqual(report.to_dict()["passed"], False)


if __name__ == '__main__':
    unittest.main()
