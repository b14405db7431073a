"""
URL configuration for rcautocalib project.

The admin browses training runs and evaluations; `runs.urls` serves the same
records as JSON.
"""
from django.contrib import admin
from django.urls import path, include

urlpatterns = [
    path('', include('runs.urls')),
    path('admin/', admin.site.urls),
]
