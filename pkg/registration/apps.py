from django.apps import AppConfig


class RegistrationAppConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'registration'
    verbose_name = "Жёсткая регистрация объёмов"
