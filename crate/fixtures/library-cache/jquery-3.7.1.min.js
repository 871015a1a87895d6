/* jQuery stand-in for the test corpus */
(function (w) {
  function Q(sel) { this.sel = sel; }
  function $(sel) {
    if (typeof sel === 'function') { sel(); return; }
    return new Q(sel);
  }
  $.fn = Q.prototype;
  ['hide', 'show', 'html', 'text', 'on', 'css', 'attr', 'append', 'addClass', 'removeClass', 'each'].forEach(function (m) {
    Q.prototype[m] = function () { return this; };
  });
  Q.prototype.ready = function (f) { if (typeof f === 'function') { f(); } return this; };
  w.jQuery = w.$ = $;
})(window);
