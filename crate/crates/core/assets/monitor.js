(function (w) {
  if (w.__selfheal) { return; }
  var uuid = {{PAGE_UUID}};
  var endpoint = {{ENDPOINT}};
  var docActivations = {{DOC_ACTIVATIONS}};
  var MAX_STACK = 60000;
  var sent = {};

  function post(path, payload) {
    try {
      var body = JSON.stringify(payload);
      var url = endpoint + path;
      if (w.navigator && typeof w.navigator.sendBeacon === 'function') {
        if (w.navigator.sendBeacon(url, body)) { return; }
      }
      var xhr = new w.XMLHttpRequest();
      xhr.open('POST', url, true);
      xhr.setRequestHeader('Content-Type', 'text/plain');
      xhr.send(body);
    } catch (ignored) {}
  }

  function now() {
    try { return new Date().toISOString(); } catch (ignored) { return null; }
  }

  function report(message, stack) {
    stack = stack ? String(stack) : '';
    if (stack.length > MAX_STACK) { stack = stack.substring(0, MAX_STACK); }
    post('/error', {
      page_uuid: uuid,
      page_url: String(w.location.href),
      raw_message: String(message),
      stack: stack,
      timestamp: now()
    });
  }

  function activation(strategy, key, resource) {
    try {
      var id = strategy + '\n' + key;
      if (sent[id]) { return; }
      sent[id] = true;
      post('/activation', {
        page_uuid: uuid,
        strategy: strategy,
        target_error: key,
        resource_url: resource,
        occurred_at: now()
      });
    } catch (ignored) {}
  }

  w.__selfheal = { activation: activation };

  if (w.addEventListener) {
    w.addEventListener('error', function (ev) {
      try {
        if (!ev || ev.message === undefined) { return; }
        var stack = ev.error && ev.error.stack;
        if (!stack && ev.filename) {
          stack = '    at ' + ev.filename + ':' + ev.lineno + ':' + ev.colno;
        }
        report(ev.message, stack);
      } catch (ignored) {}
    }, true);
    w.addEventListener('unhandledrejection', function (ev) {
      try {
        var reason = ev && ev.reason;
        var message = reason && reason.message !== undefined ? reason.message : String(reason);
        report('Uncaught (in promise) ' + message, reason && reason.stack);
      } catch (ignored) {}
    });
    if (docActivations.length) {
      w.addEventListener('load', function () {
        for (var i = 0; i < docActivations.length; i++) {
          activation(docActivations[i][0], docActivations[i][1], docActivations[i][2]);
        }
      });
    }
  }
})(window);
