"""
Tests for the management commands and the reid command-line entry point.
"""
import json
from io import StringIO

import numpy as np
import pytest
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from reid import cli
from reid.checkpoint import save_checkpoint
from reid.trainer import LAST_CHECKPOINT
from shared.utils import read_jsonl

from .test_base import BaseTestCase


class CommandTestMixin(BaseTestCase):
    """Helpers for driving commands."""

    def _call(self, name, *args, **options):
        out = StringIO()
        call_command(name, *args, stdout=out, stderr=StringIO(), **options)
        return out.getvalue()

    def _config_file(self, root, out_dir, **sections):
        path = self._make_tempdir() / 'run.json'
        path.write_text(json.dumps(self._desk_config_dict(root, out_dir, **sections)))
        return path


@pytest.mark.integration
class SynthCommandTest(CommandTestMixin, SimpleTestCase):
    """Test the synth command."""

    def test_writes_dataset(self):
        """Test the requested tree is written under --out"""
        root = self._make_tempdir() / 'syn'
        output = self._call('synth', ids=3, cams=2, tracklets=1, frames=2, height=16, width=8, out=str(root))
        self.assertEqual(len(list(root.rglob('*.png'))), 12)
        self.assertIn('Wrote 6 tracklets', output)

    def test_invalid_count(self):
        """Test a zero identity count becomes a CommandError"""
        with self.assertRaises(CommandError):
            self._call('synth', ids=0, out=str(self._make_tempdir()))


@pytest.mark.integration
class ParamsCommandTest(CommandTestMixin, SimpleTestCase):
    """Test the params command."""

    def test_json_report(self):
        """Test counts for a configured tiny model"""
        output = self._call('params', overrides=['encoder.name=tiny', 'encoder.embed_dim=16',
                                                 'head.attn_reduce_dim=8'], classes=10, json=True)
        report = json.loads(output)
        self.assertEqual(report['trainable_params'], report['total_params'] - 16)
        classifier = next(row for row in report['modules'] if row['module'] == 'classifier')
        self.assertEqual(classifier['total'], 160)

    def test_checkpoint_table(self):
        """Test the table for a saved model"""
        path = save_checkpoint(self._make_tempdir() / 'model.pt', self._tiny_model(), epoch=1)
        output = self._call('params', checkpoint=str(path))
        self.assertIn('classifier', output)
        self.assertIn('all', output)


@pytest.mark.slow
@pytest.mark.integration
class PipelineCommandTest(CommandTestMixin, SimpleTestCase):
    """Test train, eval, extract and report on one run directory."""

    def setUp(self):
        self.root = self._synthetic_root(num_ids=4, frames=4)
        self.run_dir = self._make_tempdir() / 'run'
        self.config = self._config_file(self.root, self.run_dir, schedule={'total_epochs': 2}, validate_every=1)
        self._call('train', config=str(self.config))

    def test_train_outputs(self):
        """Test the run directory after training"""
        self.assertTrue((self.run_dir / LAST_CHECKPOINT).exists())
        kinds = [r['kind'] for r in read_jsonl(self.run_dir / 'metrics.jsonl')]
        self.assertEqual(kinds.count('epoch'), 2)

    def test_eval_writes_report(self):
        """Test eval writes eval_T<n>.json next to the checkpoint"""
        output = self._call('eval', config=str(self.config), checkpoint=str(self.run_dir / LAST_CHECKPOINT))
        report = json.loads((self.run_dir / 'eval_T4.json').read_text())
        self.assertEqual(report['protocol']['kind'], 'closed-set')
        self.assertEqual(set(report['cmc']), {'1', '5', '10', '20'})
        self.assertIn('Rank-1', output)

    def test_eval_clip_length_override(self):
        """Test an evaluation clip length override names the report"""
        self._call('eval', config=str(self.config), checkpoint=str(self.run_dir / LAST_CHECKPOINT),
                   overrides=['eval.clip_len=2'])
        self.assertTrue((self.run_dir / 'eval_T2.json').exists())

    def test_eval_feature_override(self):
        """Test the configured evaluation feature replaces the checkpoint's choice"""
        self._call('eval', config=str(self.config), checkpoint=str(self.run_dir / LAST_CHECKPOINT),
                   overrides=['head.eval_feature=pre_bn'])
        report = json.loads((self.run_dir / 'eval_T4.json').read_text())
        self.assertEqual(report['protocol']['feature_space'], 'pre_bn')

    def test_extract_dumps_features(self):
        """Test extract writes row-aligned features for the training split"""
        out = self._make_tempdir()
        self._call('extract', config=str(self.config), checkpoint=str(self.run_dir / LAST_CHECKPOINT),
                   split='train', out=str(out))
        matrix = np.load(out / 'features_train.npy')
        sidecar = read_jsonl(out / 'features_train.jsonl')
        self.assertEqual(matrix.shape, (8, 32))
        self.assertEqual([r['row'] for r in sidecar], list(range(8)))

    def test_report(self):
        """Test report renders the text table"""
        output = self._call('report', run=str(self.run_dir), no_plots=True)
        self.assertIn('Per-epoch losses', output)
        self.assertTrue((self.run_dir / 'report.txt').exists())

    def test_resume_finished_run(self):
        """Test resuming a finished run trains no further epochs"""
        output = self._call('train', config=str(self.config), resume=str(self.run_dir / LAST_CHECKPOINT))
        self.assertIn('Finished 2 epochs', output)


@pytest.mark.unit
class CommandErrorTest(CommandTestMixin, SimpleTestCase):
    """Test error translation in commands."""

    def test_missing_config(self):
        """Test a missing config file becomes a CommandError"""
        with self.assertRaisesMessage(CommandError, 'config file not found'):
            self._call('params', config='/nonexistent/run.json')

    def test_bad_override(self):
        """Test an unknown override key becomes a CommandError"""
        with self.assertRaisesMessage(CommandError, "unknown configuration key 'batch.P'"):
            self._call('params', overrides=['batch.P=3'])

    def test_missing_checkpoint(self):
        """Test eval with a missing checkpoint becomes a CommandError"""
        with self.assertRaises(CommandError):
            self._call('eval', checkpoint='/nonexistent/model.pt')


@pytest.mark.unit
class EntryPointTest(CommandTestMixin, SimpleTestCase):
    """Test exit statuses of reid.cli.main."""

    def test_no_verb(self):
        """Test no arguments prints usage and exits 2"""
        self.assertEqual(cli.main([]), 2)

    def test_help(self):
        """Test --help exits 0"""
        self.assertEqual(cli.main(['--help']), 0)

    def test_unknown_verb(self):
        """Test an unknown verb exits 2"""
        self.assertEqual(cli.main(['fly']), 2)

    def test_unknown_flag(self):
        """Test an unknown flag exits 2"""
        self.assertEqual(cli.main(['params', '--frobnicate']), 2)

    def test_failed_command(self):
        """Test a command failure exits 1"""
        self.assertEqual(cli.main(['params', '--config', '/nonexistent/run.json']), 1)

    def test_success(self):
        """Test a successful command exits 0"""
        root = self._make_tempdir() / 'syn'
        self.assertEqual(cli.main(['synth', '--ids', '2', '--frames', '1', '--out', str(root)]), 0)
        self.assertTrue((root / 'synthetic.json').exists())
