from django.urls import path
from . import views

urlpatterns = [
    path("runs/",                          views.run_list,          name="run_list"),
    path("runs/<int:run_id>/",             views.run_detail,        name="run_detail"),
    path("evaluations/",                   views.evaluation_list,   name="evaluation_list"),
    path("evaluations/<int:evaluation_id>/", views.evaluation_detail, name="evaluation_detail"),
]
