from django.apps import AppConfig


class NoisegenConfig(AppConfig):
    name = 'noisegen'
