# Generated by Django 5.2.4

import django.db.models.deletion
import django.utils.timezone
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('command', models.CharField(choices=[('generate', 'Generate datasets'), ('train', 'Train model'), ('evaluate', 'Evaluate model'), ('compare', 'Compare models'), ('electricity_prepare', 'Prepare electricity data')], max_length=50)),
                ('status', models.CharField(choices=[('running', 'Running'), ('completed', 'Completed'), ('failed', 'Failed')], default='running', max_length=20)),
                ('config', models.JSONField(default=dict, help_text='Fully resolved configuration, every default materialized.')),
                ('seeds', models.JSONField(default=dict)),
                ('dataset_digests', models.JSONField(blank=True, default=dict)),
                ('output_paths', models.JSONField(blank=True, default=dict)),
                ('manifest_path', models.CharField(blank=True, max_length=500)),
                ('tool_version', models.CharField(max_length=20)),
                ('error', models.TextField(blank=True)),
                ('started_at', models.DateTimeField(default=django.utils.timezone.now)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
            ],
            options={
                'ordering': ['-started_at'],
            },
        ),
        migrations.CreateModel(
            name='MetricsRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('model_name', models.CharField(max_length=50)),
                ('mse', models.FloatField()),
                ('mae', models.FloatField()),
                ('num_eval_pairs', models.PositiveIntegerField()),
                ('config_hash', models.CharField(max_length=64)),
                ('dataset_digest', models.CharField(blank=True, max_length=64)),
                ('report_path', models.CharField(blank=True, max_length=500)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('run', models.ForeignKey(blank=True, null=True, on_delete=django.db.models.deletion.CASCADE, related_name='metrics', to='forecasting.experimentrun')),
            ],
            options={
                'ordering': ['mse', 'created_at'],
            },
        ),
    ]
