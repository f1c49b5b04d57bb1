"""
URL configuration for the patchcast project.

Only the admin is exposed; it lists recorded experiment runs and metrics.
"""
from django.contrib import admin
from django.urls import path

urlpatterns = [
    path('admin/', admin.site.urls),
]
