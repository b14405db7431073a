from django.contrib import admin

from .models import EpochRecord, EvaluationRun, TrainingRun


class EpochRecordInline(admin.TabularInline):
    model = EpochRecord
    extra = 0
    can_delete = False
    readonly_fields = [f.name for f in EpochRecord._meta.fields]


@admin.register(TrainingRun)
class TrainingRunAdmin(admin.ModelAdmin):
    list_display = ("id", "status", "epochs_done", "best_rot_deg", "best_trans_cm", "sensor", "created_at")
    list_filter = ("status", "sensor")
    search_fields = ("checkpoint", "data_dir")
    inlines = [EpochRecordInline]


@admin.register(EvaluationRun)
class EvaluationRunAdmin(admin.ModelAdmin):
    list_display = ("id", "range_name", "seed", "samples", "rot_mean_deg", "trans_mean_cm", "created_at")
    list_filter = ("range_name", "sensor")
    search_fields = ("checkpoint", "data_dir")
