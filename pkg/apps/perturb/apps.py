from django.apps import AppConfig


class PerturbConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.perturb'
