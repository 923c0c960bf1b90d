import os
from celery import Celery

# Set the default Django settings module for the 'celery' program.
os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'config.settings')

app = Celery('predpack')

# Worker processes read CELERY_* keys from the Django settings.
app.config_from_object('django.conf:settings', namespace='CELERY')

# Picks up apps.packs.tasks (optimizer cells).
app.autodiscover_tasks()

# Without a worker, cells run synchronously in the calling process
if os.environ.get('CELERY_ALWAYS_EAGER', '0') == '1':
    app.conf.task_always_eager = True
    app.conf.task_eager_propagates = True
