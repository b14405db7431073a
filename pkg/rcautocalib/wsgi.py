"""
WSGI config for rcautocalib project.

Serves the admin and the read-only run/evaluation views.
"""

import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'rcautocalib.settings')

application = get_wsgi_application()
