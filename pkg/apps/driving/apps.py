from django.apps import AppConfig


class DrivingConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.driving'
