from django.apps import AppConfig


class BiopsyConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'biopsy'
    verbose_name = "Биопсии и планировочная сетка"
