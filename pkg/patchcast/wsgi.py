"""
WSGI config for the patchcast project.

It exposes the WSGI callable as a module-level variable named ``application``,
used by ``runserver`` to serve the run registry admin.
"""

import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'patchcast.settings')

application = get_wsgi_application()
