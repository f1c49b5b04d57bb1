from django import forms

import pandas as pd

from .exceptions import ConfigurationError
from .synthgen import SynthConfig
from .training import MODEL_KINDS, TrainConfig

TRAIN_FLAGS = ('lr', 'batch_size', 'stage1_epochs', 'stage2_epochs', 'baseline_epochs', 'seed', 'desk_scale')


class ExperimentForm(forms.Form):
    """Flags shared by every command"""
    out = forms.CharField(max_length=500)
    desk_scale = forms.BooleanField(required=False)

    def flag_errors(self):
        """Form errors as ``--flag: message`` lines"""
        lines = []
        for field, errors in self.errors.items():
            flag = '--' + field.replace('_', '-') if field != '__all__' else 'flags'
            for error in errors:
                lines.append(f'{flag}: {error}')
        return lines


def _string_list(value, flag):
    if value in (None, ''):
        return None
    if isinstance(value, str):
        value = [value]
    if not isinstance(value, list) or not all(isinstance(v, str) and v for v in value):
        raise forms.ValidationError(f'{flag} takes one or more non-empty names')
    return value


class GenerateForm(ExperimentForm):
    n = forms.IntegerField(min_value=1)
    t = forms.IntegerField(min_value=1)
    train_seed = forms.IntegerField(min_value=0, max_value=2 ** 64 - 1)
    test_seed = forms.IntegerField(min_value=0, max_value=2 ** 64 - 1)
    alpha1 = forms.FloatField()
    alpha2 = forms.FloatField()
    alpha3 = forms.FloatField()
    sigma1 = forms.FloatField(min_value=0)
    sigma2 = forms.FloatField(min_value=0)
    sigma_y = forms.FloatField(min_value=0)
    rho = forms.FloatField()
    workers = forms.IntegerField(min_value=1)
    preview = forms.BooleanField(required=False)

    def clean(self):
        cleaned_data = super().clean()
        if self.errors:
            return cleaned_data
        if cleaned_data['train_seed'] == cleaned_data['test_seed']:
            self.add_error('test_seed', 'Train and test seeds must differ.')
        try:
            self.synth_config(cleaned_data['train_seed'])
        except ConfigurationError as e:
            raise forms.ValidationError(str(e))
        return cleaned_data

    def synth_config(self, seed):
        data = self.cleaned_data
        return SynthConfig(
            num_samples=data['n'], seq_len=data['t'],
            alpha1=data['alpha1'], alpha2=data['alpha2'], alpha3=data['alpha3'],
            sigma1=data['sigma1'], sigma2=data['sigma2'], sigma_y=data['sigma_y'],
            rho=data['rho'], seed=seed,
        )


class TrainingFlagsForm(ExperimentForm):
    """Optimizer and schedule flags; shared by train and end-to-end compare"""
    seed = forms.IntegerField(min_value=0)
    horizon = forms.IntegerField(min_value=1)
    patch_len = forms.IntegerField(min_value=1)
    lr = forms.FloatField()
    batch_size = forms.IntegerField(min_value=1)
    stage1_epochs = forms.IntegerField(min_value=1)
    stage2_epochs = forms.IntegerField(min_value=1)
    baseline_epochs = forms.IntegerField(min_value=1)

    def clean_lr(self):
        lr = self.cleaned_data.get('lr')
        if lr is not None and lr <= 0:
            raise forms.ValidationError('Learning rate must be positive.')
        return lr

    def train_config(self, overrides=None):
        """TrainConfig from the flags; ``overrides`` may set the remaining optimizer fields"""
        data = self.cleaned_data
        flags = {name: data[name] for name in TRAIN_FLAGS}
        try:
            return TrainConfig(**{**(overrides or {}), **flags})
        except TypeError as e:
            raise ConfigurationError(f'training section: {e}')


class TrainForm(TrainingFlagsForm):
    model = forms.ChoiceField(choices=[(kind, kind) for kind in MODEL_KINDS])
    dataset = forms.CharField(max_length=500)
    encoder_checkpoint = forms.CharField(max_length=500, required=False)

    def clean(self):
        cleaned_data = super().clean()
        if cleaned_data.get('encoder_checkpoint') and cleaned_data.get('model') != 'proposed':
            self.add_error('encoder_checkpoint', 'Only the proposed model reuses a stage-1 encoder.')
        return cleaned_data


class EvaluateForm(ExperimentForm):
    checkpoint = forms.CharField(max_length=500, required=False)
    model = forms.ChoiceField(choices=[('', '---------'), ('persistence', 'persistence')], required=False)
    dataset = forms.CharField(max_length=500)
    patch_len = forms.IntegerField(min_value=1)
    horizon = forms.IntegerField(min_value=1)

    def clean(self):
        cleaned_data = super().clean()
        checkpoint, model = cleaned_data.get('checkpoint'), cleaned_data.get('model')
        if checkpoint and model:
            self.add_error('model', 'Give either a checkpoint or --model persistence, not both.')
        elif not checkpoint and not model and 'model' not in self.errors:
            self.add_error('checkpoint', 'A checkpoint is required unless --model persistence is given.')
        return cleaned_data


class CompareForm(TrainingFlagsForm):
    reports = forms.JSONField(required=False)
    end_to_end = forms.BooleanField(required=False)
    jobs = forms.IntegerField(min_value=1)
    train_dataset = forms.CharField(max_length=500, required=False)
    test_dataset = forms.CharField(max_length=500, required=False)
    n = forms.IntegerField(min_value=1)

    def clean_reports(self):
        return _string_list(self.cleaned_data.get('reports'), '--reports') or []

    def clean(self):
        cleaned_data = super().clean()
        reports = cleaned_data.get('reports') or []
        if cleaned_data.get('end_to_end'):
            if reports:
                self.add_error('reports', 'Reports cannot be combined with --end-to-end.')
            if bool(cleaned_data.get('train_dataset')) != bool(cleaned_data.get('test_dataset')):
                self.add_error('test_dataset', 'Give both --train-dataset and --test-dataset, or neither.')
        elif len(reports) < 2 and 'reports' not in self.errors:
            self.add_error('reports', f'At least two reports are needed for a comparison, got {len(reports)}.')
        return cleaned_data


class ElectricityPrepareForm(ExperimentForm):
    source = forms.CharField(max_length=500)
    target_meter = forms.CharField(max_length=100, required=False)
    input_meters = forms.JSONField(required=False)
    num_features = forms.IntegerField(min_value=1)
    t = forms.IntegerField(min_value=1)
    train_stride = forms.IntegerField(min_value=1, required=False)
    test_stride = forms.IntegerField(min_value=1, required=False)
    split_boundary = forms.CharField(max_length=40, required=False)
    patch_len = forms.IntegerField(min_value=1)
    horizon = forms.IntegerField(min_value=1)

    def clean_input_meters(self):
        return _string_list(self.cleaned_data.get('input_meters'), '--input-meters')

    def clean_split_boundary(self):
        boundary = self.cleaned_data.get('split_boundary')
        if not boundary:
            return None
        try:
            return pd.Timestamp(boundary).isoformat()
        except ValueError:
            raise forms.ValidationError(f'{boundary!r} is not a timestamp.')

    def clean(self):
        cleaned_data = super().clean()
        t, p = cleaned_data.get('t'), cleaned_data.get('patch_len')
        if t and p and t < p:
            self.add_error('t', f'Window length {t} is shorter than the patch length {p}.')
        return cleaned_data
