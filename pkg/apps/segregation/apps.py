from django.apps import AppConfig


class SegregationConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.segregation'
    verbose_name = 'Segregation'
