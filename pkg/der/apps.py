from django.apps import AppConfig


class DerConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'der'
    verbose_name = 'Dynamic Experience Replay'
