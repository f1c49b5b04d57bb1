from django.contrib import admin
from .models import ExperimentRun, MetricsRecord


class MetricsRecordInline(admin.TabularInline):
    model = MetricsRecord
    extra = 0
    fields = ['model_name', 'mse', 'mae', 'num_eval_pairs', 'config_hash']
    readonly_fields = fields


@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = ['id', 'command', 'model_kind', 'status', 'started_at', 'duration']
    list_filter = ['command', 'status', 'started_at']
    search_fields = ['id', 'manifest_path', 'error']
    readonly_fields = ['started_at', 'finished_at']
    inlines = [MetricsRecordInline]

    def model_kind(self, obj):
        return obj.model_kind or '-'
    model_kind.short_description = 'Model'


@admin.register(MetricsRecord)
class MetricsRecordAdmin(admin.ModelAdmin):
    list_display = ['id', 'model_name', 'mse', 'mae', 'num_eval_pairs', 'run', 'created_at']
    list_filter = ['model_name', 'created_at']
    search_fields = ['model_name', 'config_hash', 'dataset_digest']
    readonly_fields = ['created_at']
