import math
import unittest

import torch
from torch import nn

from dmrnet.combinations import CombinationMask
from dmrnet.errors import RejectedInputError
from dmrnet.losses import cross_entropy, distribution_regularizer, hard_combination_loss, total_loss
from dmrnet.mining import HardSet
from dmrnet.models.dmr import DMROutput, GaussianEmbedding


class TestDistributionRegularizer(unittest.TestCase):

    def test_standard_normal_is_zero(self):
        g = GaussianEmbedding(torch.zeros(3, 4, 5, dtype=torch.float64), torch.zeros(3, 4, 5, dtype=torch.float64))
        self.assertEqual(distribution_regularizer(g).item(), 0.0)

    def test_non_negative(self):
        gen = torch.Generator().manual_seed(0)
        g = GaussianEmbedding(torch.randn(8, 4, 5, generator=gen), torch.randn(8, 4, 5, generator=gen))
        self.assertGreaterEqual(distribution_regularizer(g).item(), 0.0)

    def test_gradient_with_respect_to_variance(self):
        # dL/dsigma^2 = (1 - 1/sigma^2) / 2: shrinks variances above 1, grows those below 1
        mu = torch.zeros(1, 1, 1, dtype=torch.float64)

        def loss(variance):
            return distribution_regularizer(GaussianEmbedding(mu, 0.5 * variance.log()))

        h = 1e-6
        for value in [0.25, 0.5, 1.0, 2.0, 4.0]:
            with self.subTest(variance=value):
                variance = torch.full((1, 1, 1), value, dtype=torch.float64, requires_grad=True)
                loss(variance).backward()
                grad = variance.grad.item()
                self.assertAlmostEqual(grad, 0.5 * (1 - 1 / value), places=10)
                numerical = (loss(torch.full((1, 1, 1), value + h, dtype=torch.float64)) - loss(torch.full((1, 1, 1), value - h, dtype=torch.float64))).item() / (2 * h)
                self.assertAlmostEqual(grad, numerical, places=6)
                if value < 1:
                    self.assertLess(grad, 0)
                elif value > 1:
                    self.assertGreater(grad, 0)
                else:
                    self.assertEqual(grad, 0.0)

    def test_monte_carlo_agreement(self):
        # 100 (mu, sigma) elements of one 10 x 10 feature map, 1e6 draws each
        gen = torch.Generator().manual_seed(0)
        mu = 0.8 * torch.randn(1, 10, 10, generator=gen, dtype=torch.float64)
        log_sigma = torch.empty(1, 10, 10, dtype=torch.float64).uniform_(-1.0, 0.5, generator=gen)
        closed_form = distribution_regularizer(GaussianEmbedding(mu, log_sigma)).item()
        n = 1_000_000
        means, variances = [], []
        for m, ls in zip(mu.flatten().tolist(), log_sigma.flatten().tolist()):
            eps = torch.randn(n, generator=gen, dtype=torch.float64)
            x = m + math.exp(ls) * eps
            # log q(x) - log p(x)
            log_ratio = -ls - 0.5 * eps.pow(2) + 0.5 * x.pow(2)
            means.append(log_ratio.mean().item())
            variances.append(log_ratio.var().item())
        estimate = sum(means) / len(means)
        standard_error = math.sqrt(sum(v / n for v in variances)) / len(means)
        self.assertLess(abs(estimate - closed_form), 3 * standard_error)


class TestCrossEntropy(unittest.TestCase):

    def test_matches_log_softmax(self):
        logits = torch.tensor([[1.0, 2.0, 0.5], [0.0, -1.0, 3.0]], dtype=torch.float64)
        labels = torch.tensor([1, 2])
        expected = -(logits.log_softmax(-1)[0, 1] + logits.log_softmax(-1)[1, 2]) / 2
        self.assertAlmostEqual(cross_entropy(logits, labels).item(), expected.item(), places=12)

    def test_single_vector(self):
        logits = torch.tensor([2.0, 0.0], dtype=torch.float64)
        self.assertAlmostEqual(cross_entropy(logits, 0).item(), math.log(1 + math.exp(-2.0)), places=12)

    def test_label_out_of_range(self):
        with self.assertRaises(RejectedInputError):
            cross_entropy(torch.zeros(2, 3), torch.tensor([0, 3]))
        with self.assertRaises(RejectedInputError):
            cross_entropy(torch.zeros(2, 3), torch.tensor([-1, 0]))


class TestHardCombinationLoss(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        torch.manual_seed(0)
        cls.classifier = nn.Linear(4, 3, bias=False).double()
        gen = torch.Generator().manual_seed(1)
        cls.pooled = torch.randn(6, 4, generator=gen, dtype=torch.float64)
        cls.labels = torch.tensor([0, 1, 2, 0, 1, 2])
        cls.mask_indices = torch.tensor([1, 2, 3, 4, 5, 6])

    def test_inactive(self):
        self.assertEqual(hard_combination_loss(self.pooled, self.labels, self.mask_indices, None, self.classifier).item(), 0.0)
        no_hit = HardSet((7,))
        self.assertEqual(hard_combination_loss(self.pooled, self.labels, self.mask_indices, no_hit, self.classifier).item(), 0.0)

    def test_masked_mean_over_full_batch(self):
        hard_set = HardSet((2, 5))
        loss = hard_combination_loss(self.pooled, self.labels, self.mask_indices, hard_set, self.classifier)
        per_sample = cross_entropy(self.classifier(self.pooled), self.labels, reduction="none")
        expected = (per_sample[1] + per_sample[4]) / 6
        self.assertAlmostEqual(loss.item(), expected.item(), places=12)

    def test_single_mask(self):
        hard_set = HardSet((3,))
        loss = hard_combination_loss(self.pooled, self.labels, CombinationMask((1, 1, 0)), hard_set, self.classifier)
        self.assertAlmostEqual(loss.item(), cross_entropy(self.classifier(self.pooled), self.labels).item(), places=12)

    def test_gradient_only_from_hard_samples(self):
        pooled = self.pooled.clone().requires_grad_(True)
        loss = hard_combination_loss(pooled, self.labels, self.mask_indices, HardSet((1, 6)), self.classifier)
        loss.backward()
        norms = pooled.grad.norm(dim=-1)
        self.assertGreater(norms[0].item(), 0.0)
        self.assertGreater(norms[5].item(), 0.0)
        self.assertTrue(torch.equal(norms[1:5], torch.zeros(4, dtype=torch.float64)))


class TestTotalLoss(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        torch.manual_seed(0)
        cls.classifier = nn.Linear(4, 3, bias=False).double()
        gen = torch.Generator().manual_seed(2)
        mu = torch.randn(5, 4, 2, generator=gen, dtype=torch.float64)
        log_sigma = 0.3 * torch.randn(5, 4, 2, generator=gen, dtype=torch.float64)
        sampled = mu + torch.randn(5, 4, 2, generator=gen, dtype=torch.float64) * log_sigma.exp()
        pooled = sampled.mean(-1)
        cls.outputs = DMROutput(logits=cls.classifier(pooled), mu=mu, log_sigma=log_sigma, sampled=sampled, pooled=pooled)
        cls.labels = torch.tensor([0, 1, 2, 1, 0])
        cls.mask_indices = torch.tensor([1, 3, 3, 2, 1])

    def test_composition(self):
        hard_set = HardSet((3,))
        losses = total_loss(self.outputs, self.labels, self.mask_indices, hard_set, 1e-3, 0.7, self.classifier)
        expected = losses.l_ttl + 1e-3 * losses.l_dr + 0.7 * losses.l_hcr
        self.assertAlmostEqual(losses.total.item(), expected.item(), places=12)
        self.assertGreater(losses.l_hcr.item(), 0.0)
        self.assertEqual(set(losses.to_dict()), {"l_ttl", "l_dr", "l_hcr", "total", "alpha", "beta"})

    def test_beta_zero_drops_hard_term(self):
        losses = total_loss(self.outputs, self.labels, self.mask_indices, HardSet((3,)), 1e-3, 0.0, self.classifier)
        expected = losses.l_ttl + 1e-3 * losses.l_dr
        self.assertEqual(losses.total.item(), expected.item())

    def test_rejected(self):
        with self.assertRaises(RejectedInputError):
            total_loss(self.outputs, self.labels, self.mask_indices, None, -1.0, 0.0, self.classifier)
        with self.assertRaises(RejectedInputError):
            total_loss(self.outputs, torch.tensor([], dtype=torch.long), self.mask_indices, None, 0.0, 0.0, self.classifier)


if __name__ == '__main__':
    unittest.main()
