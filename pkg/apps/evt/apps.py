from django.apps import AppConfig


class EvtConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.evt'
