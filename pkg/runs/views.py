from django.http import JsonResponse
from django.shortcuts import get_object_or_404
from django.views.decorators.http import require_GET

from .models import EvaluationRun, TrainingRun


@require_GET
def run_list(request):
    runs = TrainingRun.objects.all()
    status = request.GET.get("status")
    if status:
        runs = runs.filter(status=status)
    return JsonResponse({"runs": [r.as_dict() for r in runs]})


@require_GET
def run_detail(request, run_id):
    run = get_object_or_404(TrainingRun, id=run_id)
    return JsonResponse({**run.as_dict(), "epochs": [e.as_dict() for e in run.epochs.all()]})


@require_GET
def evaluation_list(request):
    return JsonResponse({"evaluations": [e.as_dict() for e in EvaluationRun.objects.all()]})


@require_GET
def evaluation_detail(request, evaluation_id):
    evaluation = get_object_or_404(EvaluationRun, id=evaluation_id)
    return JsonResponse(evaluation.as_dict())
