from django.apps import AppConfig


class ContinuationConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.continuation'
    verbose_name = 'Continuation'
