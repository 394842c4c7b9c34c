"""
Serializers validating run configuration documents.

Every section is required here; ``reid.config`` merges the defaults in
before validation, so a missing section means a malformed document.
"""
from rest_framework import serializers

from .datasets import LAYOUTS
from .evalkit import METRICS, PROTOCOLS
from .model import ENCODERS, EVAL_FEATURES
from .transforms import REA_FILLS


def _pair(child, **kwargs):
    return serializers.ListField(child=child, min_length=2, max_length=2, **kwargs)


def _check_odd_kernel(value):
    if value % 2 == 0:
        raise serializers.ValidationError("Kernel size must be odd")
    return value


class DatasetSerializer(serializers.Serializer):
    """Serializer for the dataset section."""
    root = serializers.CharField(allow_null=True)
    layout = serializers.ChoiceField(choices=LAYOUTS)
    split_id = serializers.IntegerField(min_value=0)
    num_splits = serializers.IntegerField(min_value=1)
    split_seed = serializers.IntegerField()
    verify_images = serializers.BooleanField()


class BatchSerializer(serializers.Serializer):
    """Serializer for the C x K batch structure."""
    C = serializers.IntegerField(min_value=2, error_messages={
        'min_value': "C must be at least 2 so every batch has negatives",
    })
    K = serializers.IntegerField(min_value=2, error_messages={
        'min_value': "K must be at least 2 so every batch has positives",
    })


class ReaSerializer(serializers.Serializer):
    """Serializer for random erasing parameters."""
    probability = serializers.FloatField(min_value=0.0, max_value=1.0)
    area_range = _pair(serializers.FloatField())
    aspect_r1 = serializers.FloatField(min_value=0.0, max_value=1.0)
    fill = serializers.ChoiceField(choices=REA_FILLS)

    def validate_area_range(self, value):
        s_l, s_h = value
        if not 0.0 < s_l <= s_h < 1.0:
            raise serializers.ValidationError("Area range must satisfy 0 < s_l <= s_h < 1")
        return value

    def validate_aspect_r1(self, value):
        if value <= 0.0:
            raise serializers.ValidationError("Aspect r1 must be positive")
        return value


class TransformSerializer(serializers.Serializer):
    """Serializer for frame preprocessing."""
    target_size = _pair(serializers.IntegerField(min_value=1))
    pad = serializers.IntegerField(min_value=0)
    flip_prob = serializers.FloatField(min_value=0.0, max_value=1.0)
    mean = serializers.ListField(child=serializers.FloatField(), min_length=3, max_length=3)
    std = serializers.ListField(child=serializers.FloatField(), min_length=3, max_length=3)
    rea = ReaSerializer()

    def validate_std(self, value):
        if any(s <= 0 for s in value):
            raise serializers.ValidationError("Std components must be positive")
        return value


class EncoderSerializer(serializers.Serializer):
    """Serializer for the frame encoder."""
    name = serializers.ChoiceField(choices=ENCODERS)
    embed_dim = serializers.IntegerField(min_value=1)
    last_stride = serializers.ChoiceField(choices=[1, 2])
    pretrained_source = serializers.CharField(allow_null=True, allow_blank=False)


class HeadSerializer(serializers.Serializer):
    """Serializer for the attention / BNNeck / classifier head."""
    attn_reduce_dim = serializers.IntegerField(min_value=1)
    bnneck_before_dml = serializers.BooleanField()
    eval_feature = serializers.ChoiceField(choices=EVAL_FEATURES)
    spatial_kernel = serializers.IntegerField(min_value=1)
    temporal_kernel = serializers.IntegerField(min_value=1)

    def validate_spatial_kernel(self, value):
        return _check_odd_kernel(value)

    def validate_temporal_kernel(self, value):
        return _check_odd_kernel(value)


class LossSerializer(serializers.Serializer):
    """Serializer for loss weights."""
    beta = serializers.FloatField(min_value=0.0)
    epsilon = serializers.FloatField(min_value=0.0)
    center_lr = serializers.FloatField(min_value=0.0)
    negate_erase_attention = serializers.BooleanField()

    def validate_epsilon(self, value):
        if value >= 1.0:
            raise serializers.ValidationError("Epsilon must be below 1")
        return value


class RllSerializer(serializers.Serializer):
    """Serializer for ranked list loss parameters; a null margin takes the layout preset."""
    alpha = serializers.FloatField()
    margin = serializers.FloatField(allow_null=True)
    lam = serializers.FloatField(min_value=0.0)
    temperature = serializers.FloatField(min_value=0.0)

    def validate_alpha(self, value):
        if value <= 0:
            raise serializers.ValidationError("Alpha must be positive")
        return value

    def validate(self, attrs):
        margin = attrs.get('margin')
        if margin is not None and not 0 < margin < attrs['alpha']:
            raise serializers.ValidationError({'margin': "Margin must lie strictly between 0 and alpha"})
        return attrs


class ScheduleSerializer(serializers.Serializer):
    """Serializer for the warmup step schedule."""
    base_lr = serializers.FloatField()
    warmup_epochs = serializers.IntegerField(min_value=0)
    decay_epochs = serializers.ListField(child=serializers.IntegerField(min_value=1), allow_empty=True)
    total_epochs = serializers.IntegerField(min_value=1)
    decay_factor = serializers.FloatField()
    weight_decay = serializers.FloatField(min_value=0.0)

    def validate(self, attrs):
        if attrs['base_lr'] <= 0 or attrs['decay_factor'] <= 0:
            raise serializers.ValidationError("Rates must be positive")
        boundaries = [attrs['warmup_epochs']] + list(attrs['decay_epochs'])
        if any(b <= a for a, b in zip(boundaries, boundaries[1:])):
            raise serializers.ValidationError({'decay_epochs': "Epoch boundaries must be strictly increasing"})
        return attrs


class EvalSerializer(serializers.Serializer):
    """Serializer for the evaluation protocol; a null clip_len reuses the training clip length."""
    kind = serializers.ChoiceField(choices=PROTOCOLS)
    num_splits = serializers.IntegerField(min_value=1)
    clip_len = serializers.IntegerField(min_value=1, allow_null=True)
    ranks = serializers.ListField(child=serializers.IntegerField(min_value=1), min_length=1)
    metric = serializers.ChoiceField(choices=METRICS)


class RunConfigSerializer(serializers.Serializer):
    """Serializer for a complete run configuration."""
    dataset = DatasetSerializer()
    batch = BatchSerializer()
    clip_len = serializers.IntegerField(min_value=1)
    transform = TransformSerializer()
    encoder = EncoderSerializer()
    head = HeadSerializer()
    loss = LossSerializer()
    rll = RllSerializer()
    schedule = ScheduleSerializer()
    eval = EvalSerializer()
    seed = serializers.IntegerField(min_value=0)
    deterministic = serializers.BooleanField()
    validate_every = serializers.IntegerField(min_value=1)
    init_from = serializers.CharField(allow_null=True)
    init_strict = serializers.BooleanField()
    out_dir = serializers.CharField(allow_null=True)
    device = serializers.CharField(allow_null=True)
    num_workers = serializers.IntegerField(min_value=0, allow_null=True)

    def validate(self, attrs):
        encoder = attrs['encoder']
        if encoder['name'] != 'tiny' and encoder['embed_dim'] != 2048:
            raise serializers.ValidationError({'encoder': "Residual encoders produce 2048 channels"})
        return attrs
