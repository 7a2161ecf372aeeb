from django.apps import AppConfig


class TransferOpConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.transfer_op'
