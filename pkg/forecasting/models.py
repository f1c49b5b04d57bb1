from django.db import models
from django.utils import timezone


class ExperimentRun(models.Model):
    """One invocation of an experiment command, mirroring its RunManifest file"""
    COMMAND_CHOICES = [
        ('generate', 'Generate datasets'),
        ('train', 'Train model'),
        ('evaluate', 'Evaluate model'),
        ('compare', 'Compare models'),
        ('electricity_prepare', 'Prepare electricity data'),
    ]

    STATUS_CHOICES = [
        ('running', 'Running'),
        ('completed', 'Completed'),
        ('failed', 'Failed'),
    ]

    command = models.CharField(max_length=50, choices=COMMAND_CHOICES)
    status = models.CharField(max_length=20, choices=STATUS_CHOICES, default='running')
    config = models.JSONField(default=dict, help_text="Fully resolved configuration, every default materialized.")
    seeds = models.JSONField(default=dict)
    dataset_digests = models.JSONField(default=dict, blank=True)
    output_paths = models.JSONField(default=dict, blank=True)
    manifest_path = models.CharField(max_length=500, blank=True)
    tool_version = models.CharField(max_length=20)
    error = models.TextField(blank=True)
    started_at = models.DateTimeField(default=timezone.now)
    finished_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        ordering = ['-started_at']

    def __str__(self):
        return f"{self.get_command_display()} run {self.id} ({self.status})"

    @property
    def duration(self):
        """Wall-clock duration, None while running"""
        if not self.finished_at:
            return None
        return self.finished_at - self.started_at

    @property
    def model_kind(self):
        return self.config.get('model')


class MetricsRecord(models.Model):
    """Patch-level MSE / MAE of one model on one dataset"""
    run = models.ForeignKey(
        ExperimentRun,
        on_delete=models.CASCADE,
        related_name='metrics',
        null=True,
        blank=True,
    )
    model_name = models.CharField(max_length=50)
    mse = models.FloatField()
    mae = models.FloatField()
    num_eval_pairs = models.PositiveIntegerField()
    config_hash = models.CharField(max_length=64)
    dataset_digest = models.CharField(max_length=64, blank=True)
    report_path = models.CharField(max_length=500, blank=True)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['mse', 'created_at']

    def __str__(self):
        return f"{self.model_name}: MSE {self.mse:.4f} / MAE {self.mae:.4f}"
