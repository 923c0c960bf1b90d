from django.apps import AppConfig


class PacksConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.packs'
    verbose_name = 'Packs'
