"""
WSGI entry point for the studies and pricing API.

Serve with any WSGI server, e.g. ``gunicorn heston_calibration.wsgi``.
"""

import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'heston_calibration.settings')

application = get_wsgi_application()
