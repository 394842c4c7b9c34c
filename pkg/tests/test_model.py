"""
Tests for the frame encoders, temporal attention and the re-ID head.
"""
import pytest
import torch
from django.test import SimpleTestCase

from reid.model import (
    ClipFeature, FrameEncoderSpec, HeadSpec, TemporalAttention, VideoReIDNet, aggregate_clip,
    bnneck_and_classify, build_encoder, encode_frames, load_matching_state, param_report,
    render_param_table, temporal_attention,
)
from shared.exceptions import CheckpointError, ConfigurationError, NumericError, ValidationError

from .test_base import BaseTestCase


@pytest.mark.unit
class EncoderTest(SimpleTestCase):
    """Test frame encoders."""

    def test_tiny_last_stride(self):
        """Test last stride 1 keeps twice the map resolution of stride 2"""
        frames = torch.randn(2, 3, 64, 32)
        one = build_encoder(FrameEncoderSpec('tiny', 16, last_stride=1)).eval()
        two = build_encoder(FrameEncoderSpec('tiny', 16, last_stride=2)).eval()
        self.assertEqual(tuple(one(frames).shape), (2, 16, 16, 8))
        self.assertEqual(tuple(two(frames).shape), (2, 16, 8, 4))

    @pytest.mark.slow
    def test_residual_last_stride(self):
        """Test the residual trunk downsamples 16x with last stride 1 and 32x with 2"""
        frames = torch.randn(1, 3, 64, 32)
        one = build_encoder(FrameEncoderSpec('residual50-ibn', last_stride=1)).eval()
        two = build_encoder(FrameEncoderSpec('residual50', last_stride=2)).eval()
        with torch.no_grad():
            self.assertEqual(tuple(one(frames).shape), (1, 2048, 4, 2))
            self.assertEqual(tuple(two(frames).shape), (1, 2048, 2, 1))

    def test_encode_frames(self):
        """Test per-frame pooled embeddings have shape (B, T, D)"""
        encoder = build_encoder(FrameEncoderSpec('tiny', 8)).eval()
        self.assertEqual(tuple(encode_frames(torch.randn(2, 3, 3, 32, 16), encoder).shape), (2, 3, 8))

    def test_encode_frames_shape_check(self):
        """Test a 4-D frame batch raises ValidationError"""
        encoder = build_encoder(FrameEncoderSpec('tiny', 8))
        with self.assertRaises(ValidationError):
            encode_frames(torch.randn(2, 3, 32, 16), encoder)

    def test_spec_validation(self):
        """Test unknown encoders, residual widths and stride values raise ConfigurationError"""
        with self.assertRaises(ConfigurationError):
            FrameEncoderSpec('vit')
        with self.assertRaises(ConfigurationError):
            FrameEncoderSpec('residual50', embed_dim=512)
        with self.assertRaises(ConfigurationError):
            FrameEncoderSpec('tiny', 16, last_stride=3)

    def test_imagenet_only_for_plain_residual(self):
        """Test torchvision ImageNet weights are refused for other encoders"""
        with self.assertRaises(ConfigurationError):
            build_encoder(FrameEncoderSpec('tiny', 16, pretrained_source='imagenet'))

    def test_missing_weight_file(self):
        """Test a missing pretrained weight file raises CheckpointError"""
        with self.assertRaises(CheckpointError):
            build_encoder(FrameEncoderSpec('tiny', 16, pretrained_source='/nonexistent/weights.pt'))


@pytest.mark.unit
class TemporalAttentionTest(SimpleTestCase):
    """Test attention scores and clip aggregation."""

    def setUp(self):
        torch.manual_seed(0)
        self.attention = TemporalAttention(8, reduce_dim=4)

    def test_scores_are_a_distribution(self):
        """Test scores are positive and sum to one over time"""
        scores = self.attention(torch.randn(3, 5, 8, 4, 2))
        self.assertEqual(tuple(scores.shape), (3, 5))
        self.assertTrue((scores > 0).all())
        self.assertTrue(torch.allclose(scores.sum(dim=1), torch.ones(3), atol=1e-6))

    def test_clip_feature_formula(self):
        """Test F = (1/T) * sum_t a_t * f_t"""
        feats = torch.randn(2, 4, 8)
        clip, scores = temporal_attention(feats, self.attention)
        expected = torch.stack([
            sum(scores[b, t] * feats[b, t] for t in range(4)) / 4 for b in range(2)
        ])
        self.assertTrue(torch.allclose(clip, expected, atol=1e-6))
        self.assertTrue(torch.allclose(aggregate_clip(feats, scores), expected, atol=1e-6))

    def test_frame_permutation_covariance(self):
        """Test a kernel-1 attention permutes its scores with the frames"""
        attention = TemporalAttention(8, reduce_dim=4, temporal_kernel=1)
        feats = torch.randn(2, 5, 8)
        order = torch.tensor([3, 0, 4, 1, 2])
        _, scores = temporal_attention(feats, attention)
        _, permuted = temporal_attention(feats[:, order], attention)
        self.assertTrue(torch.allclose(permuted, scores[:, order], atol=1e-6))

    def test_single_frame(self):
        """Test T = 1 gives score 1 and the frame feature itself"""
        feats = torch.randn(2, 1, 8)
        clip, scores = temporal_attention(feats, self.attention)
        self.assertTrue(torch.allclose(scores, torch.ones(2, 1)))
        self.assertTrue(torch.allclose(clip, feats[:, 0], atol=1e-6))

    def test_uniform_scores_give_scaled_mean(self):
        """Test equal logits yield the mean feature divided by T"""
        feats = torch.randn(1, 4, 8)
        scores = torch.full((1, 4), 0.25)
        self.assertTrue(torch.allclose(aggregate_clip(feats, scores), feats.mean(dim=1) / 4, atol=1e-6))

    def test_non_finite_features(self):
        """Test NaN frame features raise NumericError"""
        feats = torch.randn(1, 3, 8)
        feats[0, 1, 2] = float('nan')
        with self.assertRaises(NumericError):
            temporal_attention(feats, self.attention)

    def test_wrong_width(self):
        """Test features of another width raise ValidationError"""
        with self.assertRaises(ValidationError):
            self.attention(torch.randn(1, 3, 6))

    def test_even_kernel_rejected(self):
        """Test an even temporal kernel raises ConfigurationError"""
        with self.assertRaises(ConfigurationError):
            HeadSpec(num_classes=4, temporal_kernel=2)


@pytest.mark.unit
class VideoReIDNetTest(BaseTestCase, SimpleTestCase):
    """Test the full network."""

    def test_forward_shapes(self):
        """Test every output of one forward pass"""
        model = self._tiny_model(num_classes=5, embed_dim=16)
        output = model(torch.randn(2, 4, 3, 32, 16))
        self.assertIsInstance(output, ClipFeature)
        self.assertEqual(tuple(output.pre_bn.shape), (2, 16))
        self.assertEqual(tuple(output.post_bn.shape), (2, 16))
        self.assertEqual(tuple(output.logits.shape), (2, 5))
        self.assertEqual(tuple(output.attention.shape), (2, 4))
        self.assertEqual(tuple(output.frame_features.shape), (2, 4, 16))

    def test_dml_feature_choice(self):
        """Test the metric-learning feature follows the BNNeck flag"""
        frames = torch.randn(2, 3, 3, 32, 16)
        after = self._tiny_model(bnneck_before_dml=True)(frames)
        before = self._tiny_model(bnneck_before_dml=False)(frames)
        self.assertTrue(torch.equal(after.dml_feature, after.post_bn))
        self.assertTrue(torch.equal(before.dml_feature, before.pre_bn))

    def test_bnneck_and_classifier(self):
        """Test frozen BNNeck shift and bias-free classifier"""
        model = self._tiny_model()
        self.assertFalse(model.bnneck.bias.requires_grad)
        self.assertTrue(model.bnneck.weight.requires_grad)
        self.assertIsNone(model.classifier.bias)

    def test_bnneck_width_check(self):
        """Test features of the wrong width raise ValidationError"""
        model = self._tiny_model(embed_dim=16)
        with self.assertRaises(ValidationError):
            bnneck_and_classify(torch.randn(2, 8), model)

    def test_embed_is_inference_feature(self):
        """Test embed returns the configured feature space without gradients"""
        model = self._tiny_model().eval()
        frames = torch.randn(2, 3, 3, 32, 16)
        features = model.embed(frames)
        self.assertFalse(features.requires_grad)
        with torch.no_grad():
            self.assertTrue(torch.equal(features, model(frames).post_bn))

    def test_gradients_reach_attention(self):
        """Test the loss gradient flows into encoder and attention"""
        model = self._tiny_model()
        model(torch.randn(2, 3, 3, 32, 16)).logits.sum().backward()
        self.assertIsNotNone(model.attention.temporal.weight.grad)
        self.assertIsNotNone(model.encoder.features[0].weight.grad)

    def test_reset_classifier(self):
        """Test resizing the classifier updates the head spec"""
        model = self._tiny_model(num_classes=8)
        model.reset_classifier(3)
        self.assertEqual(model.classifier.out_features, 3)
        self.assertEqual(model.head_spec.num_classes, 3)


@pytest.mark.unit
class WeightLoadingTest(BaseTestCase, SimpleTestCase):
    """Test partial and strict weight loading."""

    def test_lenient_skips_shape_mismatch(self):
        """Test a different class count skips only the classifier"""
        source = self._tiny_model(num_classes=8, seed=1)
        target = self._tiny_model(num_classes=4, seed=2)
        report = load_matching_state(target, source.state_dict())
        self.assertEqual(report.shape_mismatch, ['classifier.weight'])
        self.assertEqual(report.missing, [])
        self.assertTrue(torch.equal(target.attention.spatial.weight, source.attention.spatial.weight))

    def test_strict_rejects_mismatch(self):
        """Test strict loading fails on any difference"""
        source = self._tiny_model(num_classes=8)
        target = self._tiny_model(num_classes=4)
        with self.assertRaises(CheckpointError):
            load_matching_state(target, source.state_dict(), strict=True)

    def test_unexpected_keys_reported(self):
        """Test extra tensors are listed as unexpected"""
        model = self._tiny_model()
        state = {**model.state_dict(), 'extra.weight': torch.zeros(1)}
        report = load_matching_state(model, state)
        self.assertEqual(report.unexpected, ['extra.weight'])


@pytest.mark.unit
class ParamReportTest(BaseTestCase, SimpleTestCase):
    """Test parameter accounting."""

    def test_counts(self):
        """Test totals and the frozen BNNeck shift"""
        model = self._tiny_model(num_classes=5, embed_dim=16)
        report = param_report(model)
        total = sum(p.numel() for p in model.parameters())
        self.assertEqual(report['total_params'], total)
        self.assertEqual(report['trainable_params'], total - 16)
        modules = {row['module']: row for row in report['modules']}
        self.assertEqual(set(modules), {'encoder', 'attention', 'bnneck', 'classifier'})
        self.assertEqual(modules['classifier']['total'], 16 * 5)
        self.assertEqual(sum(row['total'] for row in report['modules']), total)

    def test_table(self):
        """Test the rendered table lists every module and the total"""
        table = render_param_table(param_report(self._tiny_model()))
        for name in ('encoder', 'attention', 'bnneck', 'classifier', 'all'):
            self.assertIn(name, table)

    @pytest.mark.slow
    def test_residual_head_size(self):
        """Test the residual network's head on top of the 2048-d trunk"""
        model = VideoReIDNet(FrameEncoderSpec('residual50-ibn'), HeadSpec(num_classes=625))
        modules = {row['module']: row for row in param_report(model)['modules']}
        self.assertEqual(modules['classifier']['total'], 2048 * 625)
        self.assertEqual(modules['attention']['total'], 2048 * 256 * 9 + 256 + 256 * 3 + 1)
