from django.apps import AppConfig


class PhantomAppConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'phantom'
    verbose_name = "Синтетический фантом"
