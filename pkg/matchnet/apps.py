from django.apps import AppConfig


class MatchnetConfig(AppConfig):
    name = 'matchnet'
