"""
ASGI entry point for the studies and pricing API.

Pricing requests are CPU bound; the ASGI handler runs them in Django's
sync-to-async thread pool.
"""

import os

from django.core.asgi import get_asgi_application

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'heston_calibration.settings')

application = get_asgi_application()
