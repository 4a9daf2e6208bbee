from uflossmri.tasks import ns
