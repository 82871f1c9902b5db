import json
import math
import tempfile
import unittest
from pathlib import Path

import pandas as pd
import torch

from dmrnet.datasynth import generate_dataset
from dmrnet.errors import DivergenceError, IncompatibleCheckpointError, InvalidConfigError
from dmrnet.gradcheck import tiny_config
from dmrnet.run_log import VARIANCE_COLUMNS
from dmrnet.show import ShowCombinationVariances
from dmrnet.tb_callback import rewrite_logs
from dmrnet.train.train_dmr import build_model, train
from dmrnet.trainer import DMRTrainer, derive_seeds, lr_lambda


def small_config(**changes):
    kwargs = dict(train_size=48, test_size=24, batch_size=12, num_epochs=2, hcr_warmup_epochs=1)
    kwargs.update(changes)
    return tiny_config(**kwargs)


def make_trainer(config, output_dir=None, callbacks=None):
    datasets = generate_dataset(config.synthetic_spec())
    return DMRTrainer(build_model(config), config, datasets["train"], datasets["test"], callbacks=callbacks, output_dir=output_dir)


class TestSchedules(unittest.TestCase):

    def test_lr_lambda(self):
        f = lr_lambda(2, [5, 8], 10.0)
        self.assertEqual([f(e) for e in range(3)], [0.5, 1.0, 1.0])
        self.assertAlmostEqual(f(5), 0.1)
        self.assertAlmostEqual(f(9), 0.01)
        self.assertEqual(lr_lambda(0, [], 10.0)(0), 1.0)

    def test_derive_seeds(self):
        self.assertEqual(derive_seeds(3), derive_seeds(3))
        self.assertNotEqual(derive_seeds(3), derive_seeds(4))
        a, b = derive_seeds(3)
        self.assertNotEqual(a, b)


class TestDMRTrainer(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.dir = Path(cls.tmp.name)

    def test_determinism(self):
        config = small_config(num_epochs=1)
        first, second = make_trainer(config), make_trainer(config)
        first.train()
        second.train()
        for (name, p), (_, q) in zip(first.model.named_parameters(), second.model.named_parameters()):
            self.assertTrue(torch.equal(p, q), name)
        self.assertEqual(
            [s["total"] for s in first.record.steps],
            [s["total"] for s in second.record.steps]
        )

    def test_vanilla_equals_noiseless_dmr(self):
        vanilla = make_trainer(small_config(mode="vanilla", num_epochs=1))
        noiseless = make_trainer(small_config(mode="dmr", alpha=0.0, zero_noise=True, num_epochs=1))
        vanilla.train()
        noiseless.train()
        self.assertEqual(len(vanilla.record.steps), 4)
        for a, b in zip(vanilla.record.steps, noiseless.record.steps):
            self.assertEqual(a["l_ttl"], b["l_ttl"])
            self.assertEqual(a["total"], b["total"])

    def test_step_records(self):
        trainer = make_trainer(small_config())
        record = trainer.train()
        self.assertEqual(record.status, "completed")
        self.assertEqual(len(record.steps), 8)
        self.assertEqual([s["step"] for s in record.steps], list(range(1, 9)))
        step = record.steps[-1]
        self.assertAlmostEqual(step["total"], step["l_ttl"] + 1e-3 * step["l_dr"] + 0.7 * step["l_hcr"], places=10)
        # hard combination regularizer is inactive during warm-up
        self.assertTrue(all(s["hard_set"] is None and s["l_hcr"] == 0.0 for s in record.steps[:4]))
        self.assertEqual(len(record.steps[4]["hard_set"]), 2)
        self.assertEqual(len(record.epochs), 2)
        self.assertEqual(set(record.results), {"10", "01", "11", "average"})
        self.assertTrue(all(r["config_hash"] == trainer.args.config_hash for r in record.epochs[0]["variances"]))

    def test_resume_reproduces_uninterrupted_run(self):
        config = small_config(num_epochs=3, save_every_epochs=1)
        full = make_trainer(config, output_dir=self.dir / "full")
        full.train()
        resumed = make_trainer(config, output_dir=self.dir / "resumed")
        resumed.train(resume_from_checkpoint=self.dir / "full" / "checkpoint-epoch-1.zip")
        tail = [s for s in full.record.steps if s["epoch"] >= 1]
        self.assertEqual(len(tail), len(resumed.record.steps))
        for a, b in zip(tail, resumed.record.steps):
            self.assertEqual(a, b)
        for (name, p), (_, q) in zip(full.model.named_parameters(), resumed.model.named_parameters()):
            self.assertTrue(torch.equal(p, q), name)

    def test_resume_with_other_config(self):
        config = small_config(num_epochs=1, save_every_epochs=1)
        trainer = make_trainer(config, output_dir=self.dir / "other")
        trainer.train()
        changed = make_trainer(config.replace(alpha=0.5), output_dir=self.dir / "other")
        with self.assertRaises(IncompatibleCheckpointError):
            changed.train(resume_from_checkpoint=self.dir / "other" / "checkpoint-epoch-1.zip")
        # more epochs is a resumable change
        longer = make_trainer(config.replace(num_epochs=2), output_dir=self.dir / "other")
        longer.train(resume_from_checkpoint=self.dir / "other" / "checkpoint-epoch-1.zip")
        self.assertEqual(longer.record.steps[0]["epoch"], 1)

    def test_divergence(self):
        trainer = make_trainer(small_config())
        with torch.no_grad():
            trainer.model.classifier.weight.fill_(math.nan)
        with self.assertRaises(DivergenceError) as cm:
            trainer.train()
        self.assertEqual(cm.exception.step, 0)
        self.assertEqual(cm.exception.epoch, 0)
        self.assertIn("non-finite loss at step 0", str(cm.exception))
        self.assertEqual(trainer.record.status, "diverged")

    def test_one_position_maps_with_a_trailing_single_sample(self):
        # 13 samples in batches of 12 leave a final batch of one sample
        for changes in [dict(distribution_level="vector"), dict(spatial_size=1), dict(distribution_level="attention")]:
            with self.subTest(**changes):
                trainer = make_trainer(small_config(train_size=13, num_epochs=1, **changes))
                record = trainer.train()
                self.assertEqual(record.status, "completed")
                self.assertEqual(len(record.steps), 1)
        # maps with several positions keep every sample
        trainer = make_trainer(small_config(train_size=13, num_epochs=1))
        trainer.train()
        self.assertEqual(len(trainer.record.steps), 2)

    def test_batch_size_one_with_one_position_maps(self):
        with self.assertRaises(InvalidConfigError):
            small_config(batch_size=1, distribution_level="vector")
        with self.assertRaises(InvalidConfigError):
            small_config(batch_size=1, spatial_size=1)
        self.assertEqual(small_config(batch_size=1).batch_size, 1)

    def test_run_directory(self):
        run = self.dir / "run"
        checkpoint, record = train(small_config(), run, show=False)
        steps = [json.loads(line) for line in (run / "steps.jsonl").read_text().splitlines()]
        self.assertEqual(len(steps), 8)
        self.assertTrue(all(s["config_hash"] == record.config_hash for s in steps))
        variances = pd.read_csv(run / "variances.csv")
        self.assertEqual(list(variances.columns), VARIANCE_COLUMNS)
        self.assertEqual(sorted(variances["epoch"].unique().tolist()), [0, 1])
        results = pd.read_csv(run / "results.csv")
        self.assertEqual(results.iloc[-1]["index"], "average")
        self.assertEqual(json.loads((run / "run.json").read_text())["config_hash"], record.config_hash)
        self.assertEqual(checkpoint.trainer_state["global_step"], 8)

    def test_identical_runs_write_identical_files(self):
        first, second = self.dir / "first", self.dir / "second"
        train(small_config(), first, show=False)
        train(small_config(), second, show=False)
        # run.json carries the wall clock
        for name in ["config.json", "steps.jsonl", "variances.csv", "results.csv", "checkpoint.zip"]:
            self.assertEqual((first / name).read_bytes(), (second / name).read_bytes(), name)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()


class TestCallbacks(unittest.TestCase):

    def test_rewrite_logs(self):
        logs = {"step": 3, "epoch": 0, "l_ttl": 1.0, "l_dr": 0.5, "l_hcr": 0.0, "total": 1.2, "mean_sigma2": 2.0, "learning_rate": 0.05, "hard_set": None}
        grouped = rewrite_logs(logs)
        self.assertEqual(grouped["losses/breakdown"], {"l_ttl": 1.0, "l_dr": 0.5, "l_hcr": 0.0, "total": 1.2})
        self.assertEqual(grouped["variance/sigma2"], {"mean_sigma2": 2.0})
        self.assertEqual(grouped["other_data/learning_rate"], {"learning_rate": 0.05})
        self.assertNotIn("other_data/step", grouped)

    def test_show_variances(self):
        record = {
            "epoch": 4,
            "mean_sigma2": 1.5,
            "variances": [
                {"index": 1, "bits": "10", "d_j": 1.0, "in_hard_set": False},
                {"index": 2, "bits": "01", "d_j": 2.0, "in_hard_set": True},
            ],
        }
        text = ShowCombinationVariances(width=10).render(record)
        lines = text.strip().split("\n")
        self.assertIn("epoch 4", lines[0])
        self.assertIn("•◦", lines[1])
        self.assertEqual(lines[1].count("█"), 5)
        self.assertEqual(lines[2].count("█"), 10)
        self.assertIn(ShowCombinationVariances.COLOR_CHAR["red"], lines[2])
        self.assertIn("\033[34;1m", lines[1])
        self.assertNotIn(ShowCombinationVariances.COLOR_CHAR["red"], lines[1])


if __name__ == '__main__':
    unittest.main()
