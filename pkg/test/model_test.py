import unittest

import torch

from dmrnet.combinations import CombinationMask, indices_to_masks
from dmrnet.errors import RejectedInputError
from dmrnet.models.dmr import DMRConfig, DMRNet, GaussianEmbedding


def make_inputs(config: DMRConfig, batch_size: int, seed: int = 0):
    g = torch.Generator().manual_seed(seed)
    return [torch.randn(batch_size, d, generator=g, dtype=torch.float64) for d in config.input_dims]


class TestDMRNet(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        torch.manual_seed(0)
        cls.config = DMRConfig(input_dims=[5, 6, 7], num_channels=4, spatial_size=3, hidden_features=8, num_labels=4)
        cls.model = DMRNet(cls.config).double()
        cls.inputs = make_inputs(cls.config, 6)
        cls.masks = indices_to_masks(torch.tensor([1, 2, 3, 4, 5, 7]), 3)

    def test_shapes(self):
        self.model.train()
        out = self.model.forward_train(self.inputs, self.masks, generator=torch.Generator().manual_seed(0))
        self.assertEqual(tuple(out.logits.shape), (6, 4))
        self.assertEqual(tuple(out.mu.shape), (6, 4, 3))
        self.assertEqual(tuple(out.log_sigma.shape), (6, 4, 3))
        self.assertEqual(tuple(out.sampled.shape), (6, 4, 3))
        self.assertEqual(tuple(out.pooled.shape), (6, 4))
        self.assertEqual(len(out.modality_features), 3)
        self.assertIsInstance(out.embedding, GaussianEmbedding)

    def test_reparameterization(self):
        self.model.train()
        eps = torch.randn(6, 4, 3, generator=torch.Generator().manual_seed(3), dtype=torch.float64)
        out = self.model.forward_train(self.inputs, self.masks, eps=eps)
        expected = out.mu + eps * out.log_sigma.exp()
        self.assertTrue(torch.allclose(out.sampled, expected))

    def test_zero_noise_is_mu(self):
        self.model.train()
        g = torch.Generator().manual_seed(5)
        state = g.get_state()
        out = self.model.forward_train(self.inputs, self.masks, generator=g, zero_noise=True)
        self.assertTrue(torch.equal(out.sampled, out.mu))
        self.assertTrue(torch.equal(g.get_state(), state))

    def test_inference_is_deterministic(self):
        self.model.eval()
        mask = CombinationMask((1, 1, 0))
        a = self.model.forward_infer(self.inputs, mask)
        b = self.model(self.inputs, mask)
        self.assertTrue(torch.equal(a.logits, b.logits))
        self.assertTrue(torch.equal(a.pooled, a.mu.mean(-1)))

    def test_dropped_modality_has_no_influence(self):
        self.model.eval()
        mask = CombinationMask((1, 0, 1))
        changed = list(self.inputs)
        changed[1] = changed[1] + 100.0
        a = self.model.forward_infer(self.inputs, mask)
        b = self.model.forward_infer(changed, mask)
        self.assertTrue(torch.equal(a.logits, b.logits))

    def test_classifier_is_shared(self):
        self.model.eval()
        out = self.model.forward_infer(self.inputs, CombinationMask((1, 1, 1)))
        self.assertTrue(torch.allclose(self.model.predict(out.pooled), out.logits))
        self.assertIsNone(self.model.classifier.bias)

    def test_parameter_groups_cover_all_parameters(self):
        names = [n for _, group in self.model.parameter_groups() for n, _ in group]
        self.assertEqual(len(names), len(list(self.model.parameters())))
        self.assertEqual([g for g, _ in self.model.parameter_groups()], ["encoder_0", "encoder_1", "encoder_2", "fusion", "mu_head", "sigma_head", "classifier"])

    def test_rejected_inputs(self):
        self.model.eval()
        with self.assertRaises(RejectedInputError):
            self.model.forward_infer(self.inputs[:2], CombinationMask((1, 1, 1)))
        wrong = [torch.zeros(6, 3, dtype=torch.float64)] + self.inputs[1:]
        with self.assertRaises(RejectedInputError):
            self.model.forward_infer(wrong, CombinationMask((1, 1, 1)))
        with self.assertRaises(RejectedInputError):
            self.model.predict(torch.zeros(2, 5, dtype=torch.float64))
        with self.assertRaises(RejectedInputError):
            DMRNet.reparameterize(GaussianEmbedding(torch.zeros(2, 4, 3), torch.zeros(2, 4, 3)), torch.zeros(2, 4, 1))
        with self.assertRaises(RejectedInputError):
            DMRConfig(distribution_level="pixel")


class TestDMRNetVariants(unittest.TestCase):

    def test_vector_level(self):
        torch.manual_seed(0)
        config = DMRConfig(input_dims=[3, 3], num_channels=4, spatial_size=5, hidden_features=6, num_labels=3, distribution_level="vector")
        model = DMRNet(config).double().train()
        out = model.forward_train(make_inputs(config, 4), CombinationMask((1, 1)), generator=torch.Generator().manual_seed(0))
        self.assertEqual(tuple(out.mu.shape), (4, 4, 1))
        self.assertEqual(tuple(out.logits.shape), (4, 3))

    def test_attention_level(self):
        torch.manual_seed(0)
        config = DMRConfig(input_dims=[3, 3], num_channels=4, spatial_size=5, hidden_features=6, num_labels=3, distribution_level="attention")
        self.assertEqual(config.effective_spatial_size, 1)
        model = DMRNet(config).double().train()
        out = model.forward_train(make_inputs(config, 4), CombinationMask((1, 1)), generator=torch.Generator().manual_seed(0))
        self.assertEqual(tuple(out.mu.shape), (4, 4, 1))
        self.assertEqual(tuple(out.logits.shape), (4, 3))
        names = [name for name, _ in model.parameter_groups()]
        self.assertEqual(names, ["encoder_0", "encoder_1", "fusion", "attention_pool", "mu_head", "sigma_head", "classifier"])
        # pooling is a convex combination of the positions
        z = torch.randn(2, 4, 5, generator=torch.Generator().manual_seed(1), dtype=torch.float64)
        pooled = model.attention_pool(z)
        self.assertEqual(tuple(pooled.shape), (2, 4, 1))
        self.assertTrue(torch.all(pooled.squeeze(-1) <= z.max(-1).values + 1e-12))
        self.assertTrue(torch.all(pooled.squeeze(-1) >= z.min(-1).values - 1e-12))
        constant = torch.ones(2, 4, 5, dtype=torch.float64)
        self.assertTrue(torch.allclose(model.attention_pool(constant), torch.ones(2, 4, 1, dtype=torch.float64)))

    def test_log_sigma_is_clamped(self):
        torch.manual_seed(0)
        config = DMRConfig(input_dims=[3, 3], num_channels=4, spatial_size=5, hidden_features=6, num_labels=3, log_sigma_bound=10.0)
        model = DMRNet(config).double().train()
        for raw, expected in [(50.0, 10.0), (-50.0, -10.0), (3.0, 3.0)]:
            with self.subTest(raw=raw):
                with torch.no_grad():
                    model.sigma_head.norm.weight.zero_()
                    model.sigma_head.norm.bias.fill_(raw)
                out = model.forward_train(make_inputs(config, 4), CombinationMask((1, 1)), zero_noise=True)
                self.assertTrue(torch.equal(out.log_sigma, torch.full_like(out.log_sigma, expected)))

    def test_zero_init_sigma_head(self):
        torch.manual_seed(0)
        config = DMRConfig(input_dims=[3, 3], num_channels=4, spatial_size=5, hidden_features=6, num_labels=3, zero_init_sigma_head=True)
        model = DMRNet(config).double().eval()
        out = model.forward_infer(make_inputs(config, 4), CombinationMask((1, 0)))
        # fresh batch norm: zero input, running mean 0, running var 1
        self.assertTrue(torch.allclose(out.log_sigma, torch.zeros_like(out.log_sigma)))

    def test_mu_path_when_not_sampling(self):
        torch.manual_seed(0)
        config = DMRConfig(input_dims=[3, 3], num_channels=4, spatial_size=5, hidden_features=6, num_labels=3, sample_embedding=False)
        model = DMRNet(config).double().train()
        out = model.forward_train(make_inputs(config, 4), CombinationMask((1, 1)), generator=torch.Generator().manual_seed(0))
        self.assertTrue(torch.equal(out.sampled, out.mu))

    def test_same_seed_same_model(self):
        config = DMRConfig(input_dims=[3, 3], num_channels=4, spatial_size=5, hidden_features=6, num_labels=3)
        torch.manual_seed(11)
        a = DMRNet(config)
        torch.manual_seed(11)
        b = DMRNet(config)
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            self.assertEqual(na, nb)
            self.assertTrue(torch.equal(pa, pb))


if __name__ == '__main__':
    unittest.main()
