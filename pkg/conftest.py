import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'vesselseg.settings')
django.setup()
