"""
Tests for the training loop, checkpoints and desk-scale training runs.
"""
import json
from dataclasses import replace
from unittest.mock import patch

import pytest
import torch
from django.test import SimpleTestCase

from reid.checkpoint import FORMAT_VERSION, load_checkpoint, model_from_checkpoint, save_checkpoint
from reid.datasets import BatchSpec, PKBatchSampler, scan_dataset
from reid.reports import epochs_to_rank1, render_report
from reid.trainer import BEST_CHECKPOINT, LAST_CHECKPOINT, METRICS_FILE, Trainer, epoch_requests, train
from shared.exceptions import CheckpointError, ConfigurationError, NumericError
from shared.utils import MetricsLogWriter, read_jsonl

from .factories import make_index
from .test_base import BaseTestCase

COMPARED_KINDS = ('step', 'epoch', 'validation')


def _comparable(history):
    return [r for r in history if r['kind'] in COMPARED_KINDS]


@pytest.mark.unit
class EpochRequestTest(SimpleTestCase):
    """Test per-clip seed assignment."""

    def test_seeds_depend_on_epoch_and_ordinal(self):
        """Test seeds differ across clips and epochs but repeat for equal inputs"""
        index = make_index(num_ids=4)
        label_map = index.train_label_map()
        first = epoch_requests(PKBatchSampler(index, BatchSpec(2, 2), 0), label_map, 0, 1)
        again = epoch_requests(PKBatchSampler(index, BatchSpec(2, 2), 0), label_map, 0, 1)
        later = epoch_requests(PKBatchSampler(index, BatchSpec(2, 2), 0), label_map, 0, 2)
        self.assertEqual(len(first), 8)
        self.assertEqual([r.seed for r in first], [r.seed for r in again])
        self.assertEqual(len({r.seed for r in first}), 8)
        self.assertNotEqual([r.seed for r in first], [r.seed for r in later])
        self.assertTrue(all(0 <= r.label < 4 for r in first))


@pytest.mark.unit
class MetricsLogTest(BaseTestCase, SimpleTestCase):
    """Test the JSON-lines metrics writer."""

    def test_reset_empties_the_log(self):
        """Test a reset log holds only records written afterwards"""
        path = self._make_tempdir() / METRICS_FILE
        MetricsLogWriter(path).write('epoch', epoch=1)
        writer = MetricsLogWriter(path)
        writer.reset()
        writer.write('epoch', epoch=1)
        self.assertEqual([r['epoch'] for r in read_jsonl(path)], [1])


@pytest.mark.integration
class TrainerSetupTest(BaseTestCase, SimpleTestCase):
    """Test trainer construction."""

    def test_batch_wider_than_dataset(self):
        """Test C above the identity count raises ConfigurationError"""
        root = self._synthetic_root(num_ids=3, frames=2)
        config = self._desk_config(root, self._make_tempdir(), batch={'C': 4, 'K': 2})
        with self.assertRaises(ConfigurationError):
            Trainer(config)

    def test_single_identity_batch_rejected(self):
        """Test C = 1 is rejected before any training"""
        root = self._synthetic_root(num_ids=3, frames=2)
        with self.assertRaises(ConfigurationError):
            self._desk_config(root, self._make_tempdir(), batch={'C': 1, 'K': 4})

    def test_strict_init_with_other_classes(self):
        """Test strict initialization from a checkpoint with another class count fails"""
        root = self._synthetic_root(num_ids=4, frames=2)
        tmp = self._make_tempdir()
        source = self._tiny_model(num_classes=7, embed_dim=32, reduce_dim=16)
        path = save_checkpoint(tmp / 'source.pt', source, epoch=3)
        config = self._desk_config(root, tmp / 'run', init_from=str(path), init_strict=True)
        with self.assertRaises(CheckpointError):
            Trainer(config)

    def test_lenient_init_resets_classifier(self):
        """Test lenient initialization copies shared tensors and resizes the classifier"""
        root = self._synthetic_root(num_ids=4, frames=2)
        tmp = self._make_tempdir()
        source = self._tiny_model(num_classes=7, embed_dim=32, reduce_dim=16, seed=5)
        path = save_checkpoint(tmp / 'source.pt', source, epoch=3)
        trainer = Trainer(self._desk_config(root, tmp / 'run', init_from=str(path)))
        model = trainer.state.model
        self.assertEqual(model.classifier.out_features, 4)
        self.assertTrue(torch.equal(model.attention.spatial.weight, source.attention.spatial.weight))
        self.assertTrue(torch.equal(model.encoder.features[0].weight, source.encoder.features[0].weight))

    def test_cross_camera_validation_uses_training_split(self):
        """Test validation scores only the split the model trains on"""
        root = self._synthetic_root(num_ids=4, frames=4)
        scanned = scan_dataset(root, 'synthetic')
        index = replace(scanned, layout='prid2011', splits=((0, 1), (2, 3), (1, 2))).with_split(0)
        trainer = Trainer(self._desk_config(root, self._make_tempdir()), index)
        report = trainer.validate(1)
        self.assertEqual(report.protocol['kind'], 'cross-camera')
        self.assertEqual(report.protocol['split_ids'], [0])
        train_ids = {r.person_id for r in index.train}
        self.assertFalse(train_ids & set(index.splits[0]))
        self.assertEqual(trainer.state.records('validation')[-1]['epoch'], 1)


@pytest.mark.integration
class CheckpointTest(BaseTestCase, SimpleTestCase):
    """Test checkpoint files."""

    def test_model_round_trip(self):
        """Test a restored model produces the same embeddings"""
        model = self._tiny_model().eval()
        path = save_checkpoint(self._make_tempdir() / 'model.pt', model, epoch=2)
        restored = model_from_checkpoint(path).eval()
        frames = torch.randn(2, 3, 3, 32, 16)
        self.assertTrue(torch.equal(model.embed(frames), restored.embed(frames)))
        self.assertEqual(load_checkpoint(path)['format_version'], FORMAT_VERSION)

    def test_eval_feature_replaced(self):
        """Test a restored model takes the requested evaluation feature"""
        path = save_checkpoint(self._make_tempdir() / 'model.pt', self._tiny_model(), epoch=1)
        self.assertEqual(model_from_checkpoint(path).head_spec.eval_feature, 'post_bn')
        self.assertEqual(model_from_checkpoint(path, 'pre_bn').head_spec.eval_feature, 'pre_bn')

    def test_missing_checkpoint(self):
        """Test a missing file raises CheckpointError"""
        with self.assertRaises(CheckpointError):
            load_checkpoint(self._make_tempdir() / 'absent.pt')

    def test_foreign_file(self):
        """Test a file that is not a checkpoint raises CheckpointError"""
        path = self._make_tempdir() / 'other.pt'
        torch.save({'weights': torch.zeros(1)}, path)
        with self.assertRaises(CheckpointError):
            load_checkpoint(path)

    def test_version_mismatch(self):
        """Test another format version raises CheckpointError"""
        path = save_checkpoint(self._make_tempdir() / 'model.pt', self._tiny_model(), epoch=1)
        payload = torch.load(path)
        payload['format_version'] = FORMAT_VERSION + 1
        torch.save(payload, path)
        with self.assertRaises(CheckpointError):
            load_checkpoint(path)


@pytest.mark.slow
@pytest.mark.integration
class TrainingRunTest(BaseTestCase, SimpleTestCase):
    """Test short training runs end to end."""

    def test_run_directory(self):
        """Test the files and metric records of a two-epoch run"""
        root = self._synthetic_root(num_ids=4, frames=4)
        out = self._make_tempdir()
        config = self._desk_config(root, out, schedule={'total_epochs': 2}, validate_every=1)
        state = train(config)

        for name in ('config.json', METRICS_FILE, LAST_CHECKPOINT, BEST_CHECKPOINT):
            self.assertTrue((out / name).exists(), name)
        self.assertEqual(state.epoch, 2)
        self.assertEqual(state.total_steps, 4)

        records = read_jsonl(out / METRICS_FILE)
        self.assertEqual([r['kind'] for r in records].count('step'), 4)
        self.assertEqual([r['kind'] for r in records].count('validation'), 2)
        self.assertEqual(records[-1]['kind'], 'run')
        self.assertTrue(all('timestamp' in r for r in records))
        for record in (r for r in records if r['kind'] == 'step'):
            expected = record['id'] + record['rll'] + 0.00005 * record['center'] + record['erase_attn']
            self.assertAlmostEqual(record['total'], expected, places=4)
        self.assertAlmostEqual(records[0]['lr'], 0.0003, places=10)

        echoed = json.loads((out / 'config.json').read_text())
        self.assertEqual(echoed['schedule']['total_epochs'], 2)

    def test_fresh_run_replaces_metrics(self):
        """Test training twice into one directory leaves a single run's records"""
        root = self._synthetic_root(num_ids=4, frames=4)
        out = self._make_tempdir()
        first = train(self._desk_config(root, out, schedule={'total_epochs': 2}, validate_every=1))
        second = train(self._desk_config(root, out, schedule={'total_epochs': 2}, validate_every=1))

        records = read_jsonl(out / METRICS_FILE)
        self.assertEqual([r['kind'] for r in records].count('run'), 1)
        self.assertEqual([r['epoch'] for r in records if r['kind'] == 'epoch'], [1, 2])
        self.assertEqual(len(records), len(second.history))
        for want, got in zip(_comparable(first.history), _comparable(second.history)):
            self.assertAlmostEqual(got.get('total', 0.0), want.get('total', 0.0), places=6)

    def test_report_from_run(self):
        """Test tables and plots render from a finished run"""
        root = self._synthetic_root(num_ids=4, frames=4)
        out = self._make_tempdir()
        train(self._desk_config(root, out, schedule={'total_epochs': 2}, validate_every=1))
        written = render_report(out)
        self.assertTrue(written['losses'].exists())
        self.assertTrue(written['validation'].exists())
        self.assertIn('Per-epoch losses', written['text'].read_text())

    def test_non_finite_loss_aborts(self):
        """Test a NaN loss stops training with the step in the message"""
        root = self._synthetic_root(num_ids=4, frames=4)
        out = self._make_tempdir()
        config = self._desk_config(root, out, schedule={'total_epochs': 2})
        with patch('reid.losses.id_loss', return_value=torch.tensor(float('nan'))):
            with self.assertRaisesMessage(NumericError, 'non-finite id loss at step 1'):
                train(config)
        self.assertFalse((out / LAST_CHECKPOINT).exists())

    def test_overfits_synthetic_identities(self):
        """Test a tiny model reaches rank-1 1.0 and cuts the ID loss below a quarter"""
        root = self._synthetic_root(num_ids=8, cams=2, frames=8)
        out = self._make_tempdir()
        state = train(self._desk_config(root, out))

        first_id = state.records('step')[0]['id']
        last_id = state.records('epoch')[-1]['id']
        self.assertLess(last_id, 0.25 * first_id)
        self.assertEqual(state.records('validation')[-1]['rank1'], 1.0)
        self.assertEqual(state.best_rank1, 1.0)

    def test_resume_matches_uninterrupted_run(self):
        """Test stopping after two epochs and resuming reproduces a four-epoch run"""
        root = self._synthetic_root(num_ids=4, frames=4)
        tmp = self._make_tempdir()
        full = train(self._desk_config(root, tmp / 'full', schedule={'total_epochs': 4}, validate_every=1))
        train(self._desk_config(root, tmp / 'first', schedule={'total_epochs': 2}, validate_every=1))
        resumed = train(self._desk_config(root, tmp / 'resumed', schedule={'total_epochs': 4}, validate_every=1),
                        resume_from=tmp / 'first' / LAST_CHECKPOINT)

        expected, actual = _comparable(full.history), _comparable(resumed.history)
        self.assertEqual([(r['kind'], r['epoch']) for r in actual], [(r['kind'], r['epoch']) for r in expected])
        for want, got in zip(expected, actual):
            for key, value in want.items():
                if isinstance(value, float):
                    self.assertAlmostEqual(got[key], value, places=6, msg=f"{want['kind']} {key}")
                else:
                    self.assertEqual(got[key], value)
        self.assertEqual(resumed.total_steps, full.total_steps)

    def test_transfer_speeds_up_training(self):
        """Test fine-tuning from a trained model reaches rank-1 1.0 in fewer epochs than training from scratch"""
        source_root = self._synthetic_root(num_ids=16, cams=3, frames=6, seed=1)
        target_root = self._synthetic_root(num_ids=12, cams=3, frames=6, seed=2)
        tmp = self._make_tempdir()
        train(self._desk_config(source_root, tmp / 'source', schedule={'total_epochs': 30}))

        schedule = {'warmup_epochs': 3, 'total_epochs': 30}
        scratch = train(self._desk_config(target_root, tmp / 'scratch', schedule=schedule, validate_every=1))
        tuned = train(self._desk_config(target_root, tmp / 'tuned', schedule=schedule, validate_every=1,
                                        init_from=str(tmp / 'source' / BEST_CHECKPOINT)))

        scratch_epochs = epochs_to_rank1(scratch.history)
        tuned_epochs = epochs_to_rank1(tuned.history)
        self.assertIsNotNone(scratch_epochs)
        self.assertIsNotNone(tuned_epochs)
        self.assertLess(tuned_epochs, scratch_epochs)
