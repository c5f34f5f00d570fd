"""
URL configuration for the heston_calibration project.

    /studies/       persisted calibration studies (read-only)
    /studies/<id>/  one study with its run records
    /price/         PDE (and optional analytic) put price
"""
from django.urls import include, path

urlpatterns = [
    path('', include('experiments.urls')),
]
