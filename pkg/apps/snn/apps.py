from django.apps import AppConfig


class SnnConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "apps.snn"
