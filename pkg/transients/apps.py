from django.apps import AppConfig


class TransientsConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'transients'
    verbose_name = 'Lidar transients'
